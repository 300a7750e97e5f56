//! JSON-lines files for ground truth, predictions and image sizes. Classes
//! travel by name and are resolved against a vocabulary.

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::{BBox, DetectionDataset, DetectionImage, GroundTruthObject, Prediction};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthRow {
    pub image_id: String,
    pub xmin: f64,
    pub ymin: f64,
    pub xmax: f64,
    pub ymax: f64,
    pub class: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRow {
    pub image_id: String,
    pub xmin: f64,
    pub ymin: f64,
    pub xmax: f64,
    pub ymax: f64,
    pub class: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ImageRow {
    image_id: String,
    width: u32,
    height: u32,
}

fn read_rows<T: DeserializeOwned>(path: &Path) -> Result<Vec<(usize, T)>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l)
                .map(|row| (i + 1, row))
                .map_err(|e| Error::Format {
                    line: i + 1,
                    message: e.to_string(),
                })
        })
        .collect()
}

fn write_rows<T: Serialize>(path: &Path, rows: impl IntoIterator<Item = T>) -> Result<()> {
    let mut out = Vec::new();
    for r in rows {
        serde_json::to_writer(&mut out, &r).expect("row serializes");
        out.push(b'\n');
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&out).map_err(|e| Error::io(path, e))
}

fn class_index(classes: &[String]) -> HashMap<&str, usize> {
    classes.iter().enumerate().map(|(i, c)| (c.as_str(), i)).collect()
}

fn resolve(index: &HashMap<&str, usize>, name: &str, line: usize) -> Result<usize> {
    index
        .get(name)
        .copied()
        .ok_or_else(|| Error::Validation(format!("line {line}: unknown class `{name}`")))
}

fn bbox_at(line: usize, xmin: f64, ymin: f64, xmax: f64, ymax: f64) -> Result<BBox> {
    BBox::new(xmin, ymin, xmax, ymax).map_err(|e| e.context(format!("line {line}")))
}

pub fn read_ground_truth(path: &Path, classes: &[String]) -> Result<Vec<GroundTruthObject>> {
    let index = class_index(classes);
    read_rows::<GroundTruthRow>(path)?
        .into_iter()
        .map(|(line, r)| {
            Ok(GroundTruthObject {
                class_id: resolve(&index, &r.class, line)?,
                bbox: bbox_at(line, r.xmin, r.ymin, r.xmax, r.ymax)?,
                image_id: r.image_id,
            })
        })
        .collect()
}

pub fn read_predictions(path: &Path, classes: &[String]) -> Result<Vec<Prediction>> {
    let index = class_index(classes);
    read_rows::<PredictionRow>(path)?
        .into_iter()
        .map(|(line, r)| {
            if !(0.0..=1.0).contains(&r.score) {
                return Err(Error::Validation(format!("line {line}: score {} outside [0, 1]", r.score)));
            }
            Ok(Prediction {
                class_id: resolve(&index, &r.class, line)?,
                bbox: bbox_at(line, r.xmin, r.ymin, r.xmax, r.ymax)?,
                image_id: r.image_id,
                score: r.score,
            })
        })
        .collect()
}

pub fn write_ground_truth(path: &Path, objects: &[GroundTruthObject], classes: &[String]) -> Result<()> {
    write_rows(
        path,
        objects.iter().map(|o| GroundTruthRow {
            image_id: o.image_id.clone(),
            xmin: o.bbox.xmin,
            ymin: o.bbox.ymin,
            xmax: o.bbox.xmax,
            ymax: o.bbox.ymax,
            class: classes[o.class_id].clone(),
        }),
    )
}

pub fn write_predictions(path: &Path, preds: &[Prediction], classes: &[String]) -> Result<()> {
    write_rows(
        path,
        preds.iter().map(|p| PredictionRow {
            image_id: p.image_id.clone(),
            xmin: p.bbox.xmin,
            ymin: p.bbox.ymin,
            xmax: p.bbox.xmax,
            ymax: p.bbox.ymax,
            class: classes[p.class_id].clone(),
            score: p.score,
        }),
    )
}

/// File names inside a detection dataset directory.
pub const IMAGES_FILE: &str = "images.jsonl";
pub const GROUND_TRUTH_FILE: &str = "ground_truth.jsonl";

impl DetectionDataset {
    /// Reads `images.jsonl` (`{image_id, width, height}`) and
    /// `ground_truth.jsonl` from `dir`. Objects of unlisted images are an error.
    pub fn load_dir(dir: &Path, classes: Vec<String>) -> Result<DetectionDataset> {
        let sizes = read_rows::<ImageRow>(&dir.join(IMAGES_FILE))?;
        let mut images: Vec<DetectionImage> = sizes
            .into_iter()
            .map(|(_, r)| DetectionImage {
                image_id: r.image_id,
                width: r.width,
                height: r.height,
                objects: Vec::new(),
            })
            .collect();
        let slot: HashMap<String, usize> = images.iter().enumerate().map(|(i, im)| (im.image_id.clone(), i)).collect();
        for o in read_ground_truth(&dir.join(GROUND_TRUTH_FILE), &classes)? {
            let i = *slot
                .get(&o.image_id)
                .ok_or_else(|| Error::Validation(format!("ground truth for unlisted image `{}`", o.image_id)))?;
            images[i].objects.push(o);
        }
        DetectionDataset::new(classes, images)
    }

    pub fn save_dir(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_rows(
            &dir.join(IMAGES_FILE),
            self.images().iter().map(|i| ImageRow {
                image_id: i.image_id.clone(),
                width: i.width,
                height: i.height,
            }),
        )?;
        write_ground_truth(&dir.join(GROUND_TRUTH_FILE), &self.ground_truth(), self.classes())
    }
}
