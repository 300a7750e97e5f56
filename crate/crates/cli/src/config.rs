use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use tempcon::augment::AugmentationConfig;
use tempcon::dataspec::SyntheticSpec;
use tempcon::detkit::{default_score_thresholds, DetectionSynthSpec, TileSpec, DEFAULT_PROPORTION_TOLERANCE, VEHICLE_CLASSES};
use tempcon::moco::ContrastiveConfig;
use tempcon::probe::SuiteConfig;
use tempcon::{Error, Result};

/// One experiment: every section has defaults, so a config file only lists
/// what it changes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Root of every random stream.
    pub seed: u64,
    pub output_dir: PathBuf,
    pub dataset: DatasetSection,
    pub pretrain: PretrainSection,
    pub probe: SuiteConfig,
    pub detkit: DetkitSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            output_dir: PathBuf::from("runs/default"),
            dataset: DatasetSection::default(),
            pretrain: PretrainSection::default(),
            probe: SuiteConfig::default(),
            detkit: DetkitSection::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetSource {
    /// Generated in memory. Its `seed` field is replaced by the `dataset`
    /// substream of the root seed.
    Synthetic(SyntheticSpec),
    /// A manifest file; image paths resolve against `image_root`, which
    /// defaults to the manifest's directory.
    Manifest { path: PathBuf, image_root: Option<PathBuf> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSection {
    pub source: DatasetSource,
    /// Share of locations held out for probe validation.
    pub val_fraction: f64,
}

impl Default for DatasetSection {
    fn default() -> Self {
        Self {
            source: DatasetSource::Synthetic(SyntheticSpec::default()),
            val_fraction: 0.25,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PretrainSection {
    pub contrastive: ContrastiveConfig,
    pub augmentation: AugmentationConfig,
}

impl Default for PretrainSection {
    fn default() -> Self {
        Self {
            contrastive: ContrastiveConfig::default(),
            augmentation: AugmentationConfig::moco_v2(32),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetkitSection {
    pub classes: Vec<String>,
    pub tile: TileSpec,
    /// Share of negative tiles kept.
    pub keep_ratio: f64,
    /// Strictly descending observable fractions of the nested subsets.
    pub target_fractions: Vec<f64>,
    pub proportion_tolerance: f64,
    /// Independent matriochka draws.
    pub sampling_seeds: usize,
    pub score_thresholds: Vec<f64>,
    pub iou_threshold: f64,
    pub synthetic: DetectionSynthSpec,
}

impl Default for DetkitSection {
    fn default() -> Self {
        Self {
            classes: VEHICLE_CLASSES.iter().map(|s| s.to_string()).collect(),
            tile: TileSpec::default(),
            keep_ratio: 0.2,
            target_fractions: vec![0.5, 0.1],
            proportion_tolerance: DEFAULT_PROPORTION_TOLERANCE,
            sampling_seeds: 3,
            score_thresholds: default_score_thresholds(),
            iou_threshold: 0.0,
            synthetic: DetectionSynthSpec::default(),
        }
    }
}

impl DetkitSection {
    pub fn validate(&self) -> Result<()> {
        self.tile.validate()?;
        self.synthetic.validate()?;
        if self.classes.is_empty() {
            return Err(Error::Validation("detkit.classes is empty".into()));
        }
        if !(0.0..=1.0).contains(&self.keep_ratio) {
            return Err(Error::Validation(format!("detkit.keep_ratio {} outside [0, 1]", self.keep_ratio)));
        }
        if self.target_fractions.is_empty() || self.sampling_seeds == 0 {
            return Err(Error::Validation("detkit needs target fractions and at least one sampling seed".into()));
        }
        if self.score_thresholds.is_empty() || self.score_thresholds.iter().any(|t| !(0.0..=1.0).contains(t)) {
            return Err(Error::Validation("detkit.score_thresholds must be non-empty and within [0, 1]".into()));
        }
        if !(self.iou_threshold >= 0.0 && self.iou_threshold < 1.0) {
            return Err(Error::Validation(format!("detkit.iou_threshold {} outside [0, 1)", self.iou_threshold)));
        }
        if self.synthetic.class_totals.len() != self.classes.len() {
            return Err(Error::Validation(format!(
                "detkit.synthetic has {} classes, the vocabulary {}",
                self.synthetic.class_totals.len(),
                self.classes.len()
            )));
        }
        Ok(())
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_json(&text).map_err(|e| e.context(format!("config {}", path.display())))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Format {
            line: e.line(),
            message: e.to_string(),
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn with_overrides(mut self, seed: Option<u64>, output_dir: Option<PathBuf>) -> Self {
        if let Some(s) = seed {
            self.seed = s;
        }
        if let Some(d) = output_dir {
            self.output_dir = d;
        }
        self
    }

    /// Checks every section; touches the filesystem only to confirm that a
    /// referenced manifest exists.
    pub fn validate(&self) -> Result<()> {
        match &self.dataset.source {
            DatasetSource::Synthetic(spec) => {
                spec.validate()?;
                if spec.image_size != self.pretrain.augmentation.output_size {
                    return Err(Error::Validation(format!(
                        "augmentation output_size {} differs from the synthetic image_size {}",
                        self.pretrain.augmentation.output_size, spec.image_size
                    )));
                }
            }
            DatasetSource::Manifest { path, .. } => {
                if !path.is_file() {
                    return Err(Error::Validation(format!("manifest {} does not exist", path.display())));
                }
            }
        }
        if !(self.dataset.val_fraction > 0.0 && self.dataset.val_fraction < 1.0) {
            return Err(Error::Validation(format!(
                "dataset.val_fraction {} outside (0, 1)",
                self.dataset.val_fraction
            )));
        }
        self.pretrain.contrastive.validate()?;
        self.pretrain.augmentation.validate()?;
        self.probe.validate()?;
        self.detkit.validate()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_object_is_the_default() {
        let cfg = ExperimentConfig::from_json("{}").unwrap();
        assert_eq!(cfg, ExperimentConfig::default());
        cfg.validate().unwrap();
        assert_eq!(ExperimentConfig::from_json(&cfg.to_json()).unwrap(), cfg);
    }

    #[test]
    fn unknown_fields_and_bad_values_are_rejected() {
        assert!(matches!(ExperimentConfig::from_json("{\"sed\": 1}"), Err(Error::Format { .. })));
        let cfg = ExperimentConfig::from_json(r#"{"detkit": {"keep_ratio": 2.0}}"#).unwrap();
        assert!(matches!(cfg.validate(), Err(Error::Validation(_))));
        let cfg = ExperimentConfig::from_json(r#"{"dataset": {"source": {"manifest": {"path": "/nonexistent/m.jsonl"}}}}"#).unwrap();
        assert!(matches!(cfg.validate(), Err(Error::Validation(_))));
    }

    #[test]
    fn overrides_replace_seed_and_output_only() {
        let cfg = ExperimentConfig::default().with_overrides(Some(9), Some("x".into()));
        assert_eq!((cfg.seed, cfg.output_dir.as_path()), (9, Path::new("x")));
        assert_eq!(cfg.probe, SuiteConfig::default());
    }
}
