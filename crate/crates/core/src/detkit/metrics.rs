use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{BBox, GroundTruthObject, Prediction};
use crate::{Error, Result};

/// Score threshold used for checkpoint selection; reported next to the
/// swept F1.
pub const FIXED_SCORE_THRESHOLD: f64 = 0.15;

pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let inter = a.intersection_area(b);
    if inter == 0.0 {
        return 0.0;
    }
    (inter / (a.area() + b.area() - inter)).clamp(0.0, 1.0)
}

/// `0.15, 0.20, ..., 0.90`.
pub fn default_score_thresholds() -> Vec<f64> {
    (0..16).map(|i| f64::from(15 + 5 * i) / 100.0).collect()
}

/// Outcome for one prediction: the index of the ground truth it claimed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Match {
    pub pred: usize,
    pub gt: Option<usize>,
}

/// Indices of `preds` by descending score; ties keep input order.
fn rank_by_score(preds: &[Prediction]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..preds.len()).collect();
    order.sort_by(|&a, &b| preds[b].score.total_cmp(&preds[a].score).then(a.cmp(&b)));
    order
}

/// Greedy one-to-one matching within one image. Predictions are visited by
/// descending score; each claims the unclaimed ground truth of highest IoU
/// among those with IoU strictly above `iou_threshold` (ties go to the lower
/// index). Class-aware mode only pairs equal classes. The result is in visit
/// order.
pub fn match_detections(
    preds: &[Prediction],
    gts: &[GroundTruthObject],
    iou_threshold: f64,
    class_agnostic: bool,
) -> Result<Vec<Match>> {
    if !(iou_threshold >= 0.0) {
        return Err(Error::Contract(format!("IoU threshold {iou_threshold} is negative")));
    }
    let image = preds.first().map(|p| &p.image_id).or(gts.first().map(|g| &g.image_id));
    if let Some(id) = image {
        if preds.iter().any(|p| &p.image_id != id) || gts.iter().any(|g| &g.image_id != id) {
            return Err(Error::Contract("match_detections expects a single image".into()));
        }
    }
    let mut taken = vec![false; gts.len()];
    let mut out = Vec::with_capacity(preds.len());
    for pi in rank_by_score(preds) {
        let p = &preds[pi];
        let mut best: Option<(usize, f64)> = None;
        for (gi, g) in gts.iter().enumerate() {
            if taken[gi] || (!class_agnostic && g.class_id != p.class_id) {
                continue;
            }
            let v = iou(&p.bbox, &g.bbox);
            if v > iou_threshold && best.is_none_or(|(_, b)| v > b) {
                best = Some((gi, v));
            }
        }
        if let Some((gi, _)) = best {
            taken[gi] = true;
        }
        out.push(Match {
            pred: pi,
            gt: best.map(|(gi, _)| gi),
        });
    }
    Ok(out)
}

/// Groups predictions and ground truths by image id, keeping global indices.
fn by_image<'a>(preds: &'a [Prediction], gts: &'a [GroundTruthObject]) -> BTreeMap<&'a str, (Vec<usize>, Vec<usize>)> {
    let mut map: BTreeMap<&str, (Vec<usize>, Vec<usize>)> = BTreeMap::new();
    for (i, p) in preds.iter().enumerate() {
        map.entry(&p.image_id).or_default().0.push(i);
    }
    for (i, g) in gts.iter().enumerate() {
        map.entry(&g.image_id).or_default().1.push(i);
    }
    map
}

/// True-positive flag for every prediction, from per-image greedy matching.
fn true_positive_flags(
    preds: &[Prediction],
    gts: &[GroundTruthObject],
    iou_threshold: f64,
    class_agnostic: bool,
) -> Result<Vec<bool>> {
    let mut tp = vec![false; preds.len()];
    for (pi, gi) in by_image(preds, gts).values() {
        let p: Vec<Prediction> = pi.iter().map(|&i| preds[i].clone()).collect();
        let g: Vec<GroundTruthObject> = gi.iter().map(|&i| gts[i].clone()).collect();
        for m in match_detections(&p, &g, iou_threshold, class_agnostic)? {
            tp[pi[m.pred]] = m.gt.is_some();
        }
    }
    Ok(tp)
}

fn check_inputs(preds: &[Prediction]) -> Result<()> {
    preds.iter().try_for_each(Prediction::check)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrPoint {
    pub threshold: f64,
    pub precision: f64,
    pub recall: f64,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl PrPoint {
    pub fn f1(&self) -> f64 {
        let s = self.precision + self.recall;
        if s == 0.0 {
            0.0
        } else {
            2.0 * self.precision * self.recall / s
        }
    }
}

/// For each threshold, predictions scoring below it are dropped and the rest
/// matched per image; counts are summed over images. Precision is 1 without
/// predictions and recall is 1 without ground truths.
pub fn pr_curve(
    preds: &[Prediction],
    gts: &[GroundTruthObject],
    thresholds: &[f64],
    iou_threshold: f64,
    class_agnostic: bool,
) -> Result<Vec<PrPoint>> {
    check_inputs(preds)?;
    thresholds
        .iter()
        .map(|&t| {
            let kept: Vec<Prediction> = preds.iter().filter(|p| p.score >= t).cloned().collect();
            let tp = true_positive_flags(&kept, gts, iou_threshold, class_agnostic)?
                .iter()
                .filter(|f| **f)
                .count();
            let fp = kept.len() - tp;
            let fn_ = gts.len() - tp;
            Ok(PrPoint {
                threshold: t,
                precision: if kept.is_empty() { 1.0 } else { tp as f64 / kept.len() as f64 },
                recall: if gts.is_empty() { 1.0 } else { tp as f64 / gts.len() as f64 },
                tp,
                fp,
                fn_,
            })
        })
        .collect()
}

/// Best F1 over the curve's points.
pub fn f1_sweep(curve: &[PrPoint]) -> Result<f64> {
    if curve.is_empty() {
        return Err(Error::Contract("F1 sweep over an empty curve".into()));
    }
    Ok(curve.iter().map(PrPoint::f1).fold(f64::NEG_INFINITY, f64::max))
}

/// All-points interpolated AP. Predictions are ranked by descending score
/// (ties in input order) and marked TP/FP by greedy per-image matching; AP is
/// the sum over recall increments of the increment times the highest
/// precision reached at that recall or beyond. Without ground truths AP is 0.
pub fn average_precision(
    preds: &[Prediction],
    gts: &[GroundTruthObject],
    iou_threshold: f64,
    class_agnostic: bool,
) -> Result<f64> {
    check_inputs(preds)?;
    if gts.is_empty() {
        return Ok(0.0);
    }
    let tp = true_positive_flags(preds, gts, iou_threshold, class_agnostic)?;
    let order = rank_by_score(preds);
    let mut precision = Vec::with_capacity(order.len());
    let mut recall = Vec::with_capacity(order.len());
    let mut hits = 0usize;
    for (rank, &i) in order.iter().enumerate() {
        hits += usize::from(tp[i]);
        precision.push(hits as f64 / (rank + 1) as f64);
        recall.push(hits as f64 / gts.len() as f64);
    }
    // Envelope: running maximum from the right.
    for k in (0..precision.len().saturating_sub(1)).rev() {
        precision[k] = precision[k].max(precision[k + 1]);
    }
    let mut ap = 0.0;
    let mut prev = 0.0;
    for (p, r) in precision.iter().zip(&recall) {
        if *r > prev {
            ap += (r - prev) * p;
            prev = *r;
        }
    }
    Ok(ap)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapResult {
    pub map: f64,
    /// Class-aware AP per class; `None` for classes with neither ground truths
    /// nor predictions, which do not enter the mean.
    pub per_class: Vec<Option<f64>>,
}

/// Unweighted mean of per-class AP at IoU threshold `iou_threshold`.
pub fn mean_average_precision(
    preds: &[Prediction],
    gts: &[GroundTruthObject],
    class_count: usize,
    iou_threshold: f64,
) -> Result<MapResult> {
    if let Some(c) = preds.iter().map(|p| p.class_id).chain(gts.iter().map(|g| g.class_id)).find(|c| *c >= class_count) {
        return Err(Error::Validation(format!("class id {c} outside a vocabulary of {class_count}")));
    }
    let mut per_class = Vec::with_capacity(class_count);
    for c in 0..class_count {
        let p: Vec<Prediction> = preds.iter().filter(|x| x.class_id == c).cloned().collect();
        let g: Vec<GroundTruthObject> = gts.iter().filter(|x| x.class_id == c).cloned().collect();
        per_class.push(if p.is_empty() && g.is_empty() {
            None
        } else {
            Some(average_precision(&p, &g, iou_threshold, false)?)
        });
    }
    let present: Vec<f64> = per_class.iter().flatten().copied().collect();
    let map = if present.is_empty() {
        0.0
    } else {
        present.iter().sum::<f64>() / present.len() as f64
    };
    Ok(MapResult { map, per_class })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Level1Report {
    /// Best F1 over the threshold sweep.
    pub f1: f64,
    /// F1 at [`FIXED_SCORE_THRESHOLD`].
    pub f1_at_fixed_threshold: f64,
    pub ap: f64,
    pub curve: Vec<PrPoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Level2Report {
    pub map: f64,
    /// Class name to AP; `null` for classes absent from both files.
    pub per_class: BTreeMap<String, Option<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub iou_threshold: f64,
    pub level1: Level1Report,
    pub level2: Level2Report,
}

/// Level-1 (class-agnostic detection) and level-2 (per-class) metrics.
pub fn evaluate_detections(
    preds: &[Prediction],
    gts: &[GroundTruthObject],
    classes: &[String],
    thresholds: &[f64],
    iou_threshold: f64,
) -> Result<MetricReport> {
    let curve = pr_curve(preds, gts, thresholds, iou_threshold, true)?;
    let fixed = pr_curve(preds, gts, &[FIXED_SCORE_THRESHOLD], iou_threshold, true)?[0].f1();
    let level1 = Level1Report {
        f1: f1_sweep(&curve)?,
        f1_at_fixed_threshold: fixed,
        ap: average_precision(preds, gts, iou_threshold, true)?,
        curve,
    };
    let m = mean_average_precision(preds, gts, classes.len(), iou_threshold)?;
    let level2 = Level2Report {
        map: m.map,
        per_class: classes.iter().cloned().zip(m.per_class).collect(),
    };
    Ok(MetricReport {
        iou_threshold,
        level1,
        level2,
    })
}
