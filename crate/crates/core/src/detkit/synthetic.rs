use rand::Rng;
use rand_distr::{Distribution, Gamma, LogNormal, Normal};
use serde::{Deserialize, Serialize};

use super::{BBox, DetectionDataset, DetectionImage, GroundTruthObject, VEHICLE_CLASSES};
use crate::{Error, Result};

/// Per-class vehicle counts of the reference S split, in
/// [`VEHICLE_CLASSES`] order, over 204 images.
pub const REFERENCE_S_COUNTS: [u64; 8] = [66_504, 29_332, 16_148, 820, 1_364, 698, 432, 319];

/// Synthetic stand-in for an annotated raster collection. Class totals are
/// hit exactly; how they spread over images is random.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectionSynthSpec {
    pub num_images: usize,
    /// Objects per class; its length sets the vocabulary size.
    pub class_totals: Vec<u64>,
    /// Log-space standard deviation of the per-image object density.
    pub density_sigma: f64,
    /// Gamma shape of the per-image class affinities; smaller means images
    /// specialise more.
    pub affinity_shape: f64,
    pub min_side: u32,
    pub max_side: u32,
    pub max_clusters: usize,
    pub min_box_side: f64,
    pub max_box_side: f64,
}

impl Default for DetectionSynthSpec {
    fn default() -> Self {
        Self {
            num_images: 204,
            class_totals: REFERENCE_S_COUNTS.to_vec(),
            density_sigma: 0.8,
            affinity_shape: 2.0,
            min_side: 1500,
            max_side: 3500,
            max_clusters: 6,
            min_box_side: 8.0,
            max_box_side: 48.0,
        }
    }
}

impl DetectionSynthSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Validation(format!("detection synth spec: {m}")));
        if self.num_images == 0 || self.class_totals.is_empty() {
            return bad("needs at least one image and one class");
        }
        if !(self.density_sigma >= 0.0 && self.affinity_shape > 0.0) {
            return bad("density_sigma must be >= 0 and affinity_shape > 0");
        }
        if self.min_side == 0 || self.min_side > self.max_side || self.max_clusters == 0 {
            return bad("image sides or cluster count out of range");
        }
        if !(self.min_box_side > 0.0 && self.min_box_side <= self.max_box_side)
            || self.max_box_side >= f64::from(self.min_side)
        {
            return bad("box sides must be positive and smaller than the images");
        }
        Ok(())
    }

    /// The 8-class vocabulary when the totals have 8 entries, otherwise
    /// `class0, class1, ...`.
    pub fn class_names(&self) -> Vec<String> {
        if self.class_totals.len() == VEHICLE_CLASSES.len() {
            VEHICLE_CLASSES.iter().map(|s| s.to_string()).collect()
        } else {
            (0..self.class_totals.len()).map(|c| format!("class{c}")).collect()
        }
    }
}

/// Splits `total` over `weights` by largest remainder; the parts sum to
/// `total` exactly and ties go to the lower index.
fn apportion(total: u64, weights: &[f64]) -> Vec<u64> {
    let sum: f64 = weights.iter().sum();
    if sum <= 0.0 {
        let mut out = vec![0; weights.len()];
        out[0] = total;
        return out;
    }
    let exact: Vec<f64> = weights.iter().map(|w| total as f64 * w / sum).collect();
    let mut out: Vec<u64> = exact.iter().map(|x| x.floor() as u64).collect();
    let short = total - out.iter().sum::<u64>();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| (exact[b] - exact[b].floor()).total_cmp(&(exact[a] - exact[a].floor())).then(a.cmp(&b)));
    for &i in order.iter().take(short as usize) {
        out[i] += 1;
    }
    out
}

/// Images get a log-normal object density and gamma class affinities;
/// objects gather around a few cluster centres per image.
pub fn generate_detection_dataset(spec: &DetectionSynthSpec, rng: &mut impl Rng) -> Result<DetectionDataset> {
    spec.validate()?;
    let n = spec.num_images;
    let k = spec.class_totals.len();
    let density = LogNormal::new(0.0, spec.density_sigma).expect("validated sigma");
    let affinity = Gamma::new(spec.affinity_shape, 1.0).expect("validated shape");
    let sides: Vec<(u32, u32)> = (0..n)
        .map(|_| {
            (
                rng.random_range(spec.min_side..=spec.max_side),
                rng.random_range(spec.min_side..=spec.max_side),
            )
        })
        .collect();
    let dens: Vec<f64> = (0..n).map(|_| density.sample(rng)).collect();
    let mut counts = vec![vec![0u64; k]; n];
    for c in 0..k {
        let w: Vec<f64> = dens.iter().map(|d| d * affinity.sample(rng)).collect();
        for (i, v) in apportion(spec.class_totals[c], &w).into_iter().enumerate() {
            counts[i][c] = v;
        }
    }

    let mut images = Vec::with_capacity(n);
    for (i, ((w, h), cls)) in sides.into_iter().zip(counts).enumerate() {
        let image_id = format!("syn{i:04}");
        let (wf, hf) = (f64::from(w), f64::from(h));
        let centres: Vec<(f64, f64)> = (0..rng.random_range(1..=spec.max_clusters))
            .map(|_| (rng.random_range(0.0..wf), rng.random_range(0.0..hf)))
            .collect();
        let spread = Normal::new(0.0, 0.08 * wf.min(hf)).expect("positive spread");
        let mut objects = Vec::with_capacity(cls.iter().sum::<u64>() as usize);
        for (c, &m) in cls.iter().enumerate() {
            for _ in 0..m {
                let (cx, cy) = centres[rng.random_range(0..centres.len())];
                let bw = rng.random_range(spec.min_box_side..=spec.max_box_side);
                let bh = rng.random_range(spec.min_box_side..=spec.max_box_side);
                let x = (cx + spread.sample(rng) - bw / 2.0).clamp(0.0, wf - bw);
                let y = (cy + spread.sample(rng) - bh / 2.0).clamp(0.0, hf - bh);
                objects.push(GroundTruthObject {
                    image_id: image_id.clone(),
                    bbox: BBox::new(x, y, x + bw, y + bh)?,
                    class_id: c,
                });
            }
        }
        images.push(DetectionImage {
            image_id,
            width: w,
            height: h,
            objects,
        });
    }
    DetectionDataset::new(spec.class_names(), images)
}
