//! Detection-side dataset engineering and evaluation.
//!
//! Tiling of large rasters into overlapping windows, positive/negative tile
//! filtering, nested class-preserving subsampling ("matriochka"), greedy
//! IoU matching, PR curves, level-1 AP and level-2 mAP. The metric side only
//! consumes ground-truth and prediction files, so it works with any detector.

mod io;
mod matriochka;
mod metrics;
mod synthetic;
mod tiling;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub use io::{
    read_ground_truth, read_predictions, write_ground_truth, write_predictions, GroundTruthRow, PredictionRow,
    GROUND_TRUTH_FILE, IMAGES_FILE,
};
pub use matriochka::{matriochka_sample, ImageCounts, MatriochkaLevel, MatriochkaOutcome, DEFAULT_PROPORTION_TOLERANCE};
pub use metrics::{
    average_precision, default_score_thresholds, evaluate_detections, f1_sweep, iou, match_detections,
    mean_average_precision, pr_curve, Level1Report, Level2Report, MapResult, Match, MetricReport, PrPoint,
    FIXED_SCORE_THRESHOLD,
};
pub use synthetic::{generate_detection_dataset, DetectionSynthSpec, REFERENCE_S_COUNTS};
pub use tiling::{
    classify_tiles, subsample_negative_tiles, tile_dataset, tile_image, Tile, TileObject, TileSpec, TileSplit,
    TileWindow, MIN_KEPT_AREA_FRACTION,
};

/// Vehicle vocabulary, in the column order of the reference data table.
pub const VEHICLE_CLASSES: [&str; 8] = [
    "civilian",
    "military",
    "armored",
    "gse",
    "launcher",
    "electronics",
    "he",
    "le",
];

/// Axis-aligned box in pixel coordinates; `xmax > xmin`, `ymax > ymin`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub xmin: f64,
    pub ymin: f64,
    pub xmax: f64,
    pub ymax: f64,
}

impl BBox {
    pub fn new(xmin: f64, ymin: f64, xmax: f64, ymax: f64) -> Result<BBox> {
        let b = BBox { xmin, ymin, xmax, ymax };
        b.check()?;
        Ok(b)
    }

    fn check(&self) -> Result<()> {
        let finite = [self.xmin, self.ymin, self.xmax, self.ymax].iter().all(|v| v.is_finite());
        if finite && self.xmax > self.xmin && self.ymax > self.ymin {
            Ok(())
        } else {
            Err(Error::Validation(format!("degenerate box {self:?}")))
        }
    }

    pub fn width(&self) -> f64 {
        self.xmax - self.xmin
    }

    pub fn height(&self) -> f64 {
        self.ymax - self.ymin
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    /// Area of the overlap; 0 for boxes that only touch or are disjoint.
    pub fn intersection_area(&self, other: &BBox) -> f64 {
        let w = self.xmax.min(other.xmax) - self.xmin.max(other.xmin);
        let h = self.ymax.min(other.ymax) - self.ymin.max(other.ymin);
        if w > 0.0 && h > 0.0 {
            w * h
        } else {
            0.0
        }
    }

    /// The part of `self` inside `[x0, x1) x [y0, y1)`, if it has positive area.
    pub fn clip(&self, x0: f64, y0: f64, x1: f64, y1: f64) -> Option<BBox> {
        let b = BBox {
            xmin: self.xmin.max(x0),
            ymin: self.ymin.max(y0),
            xmax: self.xmax.min(x1),
            ymax: self.ymax.min(y1),
        };
        (b.xmax > b.xmin && b.ymax > b.ymin).then_some(b)
    }

    pub fn translate(&self, dx: f64, dy: f64) -> BBox {
        BBox {
            xmin: self.xmin + dx,
            ymin: self.ymin + dy,
            xmax: self.xmax + dx,
            ymax: self.ymax + dy,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthObject {
    pub image_id: String,
    pub bbox: BBox,
    pub class_id: usize,
}

/// One detector output; `score` lies in `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub image_id: String,
    pub bbox: BBox,
    pub class_id: usize,
    pub score: f64,
}

impl Prediction {
    fn check(&self) -> Result<()> {
        self.bbox.check()?;
        if (0.0..=1.0).contains(&self.score) {
            Ok(())
        } else {
            Err(Error::Validation(format!("score {} outside [0, 1]", self.score)))
        }
    }
}

/// One raster and its annotations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionImage {
    pub image_id: String,
    pub width: u32,
    pub height: u32,
    pub objects: Vec<GroundTruthObject>,
}

impl DetectionImage {
    /// Per-class object counts over a vocabulary of `num_classes`.
    pub fn class_counts(&self, num_classes: usize) -> Vec<u64> {
        let mut counts = vec![0u64; num_classes];
        for o in &self.objects {
            counts[o.class_id] += 1;
        }
        counts
    }
}

/// Images with their objects and the class vocabulary. Boxes are clipped to
/// their image on construction; boxes left with no area are dropped.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectionDataset {
    classes: Vec<String>,
    images: Vec<DetectionImage>,
}

impl DetectionDataset {
    pub fn new(classes: Vec<String>, mut images: Vec<DetectionImage>) -> Result<Self> {
        if classes.is_empty() {
            return Err(Error::Validation("class vocabulary is empty".into()));
        }
        let mut seen = std::collections::HashSet::new();
        for img in &mut images {
            if img.width == 0 || img.height == 0 {
                return Err(Error::Validation(format!("image `{}` has zero size", img.image_id)));
            }
            if !seen.insert(img.image_id.clone()) {
                return Err(Error::Validation(format!("duplicate image id `{}`", img.image_id)));
            }
            let (w, h) = (f64::from(img.width), f64::from(img.height));
            let mut kept = Vec::with_capacity(img.objects.len());
            for o in img.objects.drain(..) {
                if o.class_id >= classes.len() {
                    return Err(Error::Validation(format!(
                        "class id {} outside a vocabulary of {}",
                        o.class_id,
                        classes.len()
                    )));
                }
                if o.image_id != img.image_id {
                    return Err(Error::Validation(format!(
                        "object of `{}` listed under image `{}`",
                        o.image_id, img.image_id
                    )));
                }
                o.bbox.check()?;
                if let Some(bbox) = o.bbox.clip(0.0, 0.0, w, h) {
                    kept.push(GroundTruthObject { bbox, ..o });
                }
            }
            img.objects = kept;
        }
        Ok(Self { classes, images })
    }

    pub fn classes(&self) -> &[String] {
        &self.classes
    }

    pub fn images(&self) -> &[DetectionImage] {
        &self.images
    }

    pub fn num_objects(&self) -> usize {
        self.images.iter().map(|i| i.objects.len()).sum()
    }

    pub fn class_counts(&self) -> Vec<u64> {
        let mut total = vec![0u64; self.classes.len()];
        for img in &self.images {
            for (t, c) in total.iter_mut().zip(img.class_counts(self.classes.len())) {
                *t += c;
            }
        }
        total
    }

    /// Per-image class counts, the input of [`matriochka_sample`].
    pub fn image_counts(&self) -> Vec<ImageCounts> {
        self.images
            .iter()
            .map(|i| ImageCounts {
                image_id: i.image_id.clone(),
                counts: i.class_counts(self.classes.len()),
            })
            .collect()
    }

    /// The images whose ids are listed, in dataset order.
    pub fn subset(&self, image_ids: &[String]) -> DetectionDataset {
        let wanted: std::collections::HashSet<&String> = image_ids.iter().collect();
        DetectionDataset {
            classes: self.classes.clone(),
            images: self.images.iter().filter(|i| wanted.contains(&i.image_id)).cloned().collect(),
        }
    }

    pub fn ground_truth(&self) -> Vec<GroundTruthObject> {
        self.images.iter().flat_map(|i| i.objects.iter().cloned()).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gt(id: &str, b: (f64, f64, f64, f64), c: usize) -> GroundTruthObject {
        GroundTruthObject {
            image_id: id.into(),
            bbox: BBox::new(b.0, b.1, b.2, b.3).unwrap(),
            class_id: c,
        }
    }

    #[test]
    fn degenerate_boxes_are_rejected() {
        assert!(BBox::new(1.0, 0.0, 1.0, 2.0).is_err());
        assert!(BBox::new(0.0, 3.0, 1.0, 2.0).is_err());
        assert!(BBox::new(0.0, 0.0, f64::NAN, 2.0).is_err());
    }

    #[test]
    fn ingest_clips_and_drops_outside_boxes() {
        let img = DetectionImage {
            image_id: "a".into(),
            width: 10,
            height: 10,
            objects: vec![gt("a", (-5.0, 2.0, 4.0, 6.0), 0), gt("a", (12.0, 0.0, 15.0, 3.0), 1)],
        };
        let ds = DetectionDataset::new(vec!["x".into(), "y".into()], vec![img]).unwrap();
        let objs = &ds.images()[0].objects;
        assert_eq!(objs.len(), 1);
        assert_eq!(objs[0].bbox, BBox::new(0.0, 2.0, 4.0, 6.0).unwrap());
        assert_eq!(ds.class_counts(), vec![1, 0]);
    }

    #[test]
    fn ingest_rejects_unknown_class_and_duplicates() {
        let img = |id: &str, c| DetectionImage {
            image_id: id.into(),
            width: 10,
            height: 10,
            objects: vec![gt(id, (0.0, 0.0, 1.0, 1.0), c)],
        };
        assert!(DetectionDataset::new(vec!["x".into()], vec![img("a", 1)]).is_err());
        assert!(DetectionDataset::new(vec!["x".into()], vec![img("a", 0), img("a", 0)]).is_err());
    }
}
