use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{finetune, linear_probe, ProbeConfig, ProbeMode};
use crate::dataspec::{stratified_label_subset, Manifest};
use crate::image::ImageSource;
use crate::moco::EncoderState;
use crate::rng::{derive_indexed, derive_seed, seeded};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SuiteConfig {
    pub fractions: Vec<f64>,
    /// Replicates per fraction below 1; the full set runs once.
    pub replicates: usize,
    pub modes: Vec<ProbeMode>,
    pub frozen: ProbeConfig,
    pub finetune: ProbeConfig,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        Self {
            fractions: vec![0.01, 0.10, 1.00],
            replicates: 3,
            modes: vec![ProbeMode::Frozen, ProbeMode::Finetune],
            frozen: ProbeConfig::frozen(),
            finetune: ProbeConfig::finetune(),
        }
    }
}

impl SuiteConfig {
    pub fn validate(&self) -> Result<()> {
        if self.fractions.is_empty() || self.modes.is_empty() || self.replicates == 0 {
            return Err(Error::Validation(
                "suite needs at least one fraction, one mode and one replicate".into(),
            ));
        }
        if let Some(f) = self.fractions.iter().find(|f| !(**f > 0.0 && **f <= 1.0)) {
            return Err(Error::Validation(format!("label fraction {f} outside (0, 1]")));
        }
        self.frozen.validate()?;
        self.finetune.validate()
    }

    fn probe_config(&self, mode: ProbeMode) -> &ProbeConfig {
        match mode {
            ProbeMode::Frozen => &self.frozen,
            ProbeMode::Finetune => &self.finetune,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateResult {
    pub replicate: usize,
    pub num_train: usize,
    pub best_epoch: usize,
    pub top1: f64,
    pub macro_f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteCell {
    pub fraction: f64,
    pub mode: ProbeMode,
    pub mean_f1: f64,
    /// Sample standard deviation (n - 1); 0 for a single replicate.
    pub sd_f1: f64,
    pub mean_top1: f64,
    pub per_replicate: Vec<ReplicateResult>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelEfficiencyReport {
    pub cells: Vec<SuiteCell>,
}

/// `(mean, sample sd)`; the sd of fewer than two values is 0.
pub fn mean_and_sd(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    if values.is_empty() {
        return (f64::NAN, 0.0);
    }
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

impl LabelEfficiencyReport {
    pub fn cell(&self, fraction: f64, mode: ProbeMode) -> Option<&SuiteCell> {
        self.cells.iter().find(|c| c.fraction == fraction && c.mode == mode)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Rows are modes, columns are label fractions, entries are
    /// `mean (sd)` macro-F1 in percent.
    pub fn render_table(&self) -> String {
        let mut fractions: Vec<f64> = Vec::new();
        let mut modes: Vec<ProbeMode> = Vec::new();
        for c in &self.cells {
            if !fractions.contains(&c.fraction) {
                fractions.push(c.fraction);
            }
            if !modes.contains(&c.mode) {
                modes.push(c.mode);
            }
        }
        let mut out = format!("{:<10}", "mode");
        for f in &fractions {
            let _ = write!(out, " | {:>14}", format!("{}%", f * 100.0));
        }
        out.push('\n');
        out.push_str(&"-".repeat(10 + 17 * fractions.len()));
        out.push('\n');
        for m in &modes {
            let _ = write!(out, "{:<10}", m.to_string());
            for f in &fractions {
                let entry = match self.cell(*f, *m) {
                    Some(c) => format!("{:.2} ({:.2})", 100.0 * c.mean_f1, 100.0 * c.sd_f1),
                    None => "-".into(),
                };
                let _ = write!(out, " | {entry:>14}");
            }
            out.push('\n');
        }
        out
    }
}

/// Runs every `(fraction, mode)` cell. Replicate `r` of a fraction draws
/// one stratified subset that both modes share; the full training set is
/// used once.
pub fn run_label_efficiency_suite(
    state: &EncoderState,
    train: &Manifest,
    val: &Manifest,
    source: &dyn ImageSource,
    cfg: &SuiteConfig,
    seed: u64,
) -> Result<LabelEfficiencyReport> {
    cfg.validate()?;
    train.require_labels()?;
    let subset_seed = derive_seed(seed, "suite-subset");
    let probe_seed = derive_seed(seed, "suite-probe");
    let mut cells = Vec::new();
    for (fi, &fraction) in cfg.fractions.iter().enumerate() {
        let reps = if fraction >= 1.0 { 1 } else { cfg.replicates };
        let subsets = (0..reps)
            .map(|r| {
                if fraction >= 1.0 {
                    Ok(train.clone())
                } else {
                    let mut rng = seeded(derive_indexed(subset_seed, &[fi as u64, r as u64]));
                    stratified_label_subset(train, fraction, &mut rng)
                }
            })
            .collect::<Result<Vec<_>>>()?;
        for &mode in &cfg.modes {
            let mut results = Vec::with_capacity(reps);
            for (r, subset) in subsets.iter().enumerate() {
                let pc = ProbeConfig {
                    label_fraction: 1.0,
                    seed: derive_indexed(probe_seed, &[fi as u64, r as u64]),
                    ..cfg.probe_config(mode).clone()
                };
                let ctx = |e: Error| e.context(format!("fraction {fraction}, {mode}, replicate {r}"));
                let best = match mode {
                    ProbeMode::Frozen => linear_probe(state, subset, val, source, &pc).map_err(ctx)?.best,
                    ProbeMode::Finetune => finetune(state, subset, val, source, &pc).map_err(ctx)?.best,
                };
                results.push(ReplicateResult {
                    replicate: r,
                    num_train: subset.num_records(),
                    best_epoch: best.epoch,
                    top1: best.val_top1_accuracy,
                    macro_f1: best.val_macro_f1,
                });
            }
            let f1s: Vec<f64> = results.iter().map(|r| r.macro_f1).collect();
            let (mean_f1, sd_f1) = mean_and_sd(&f1s);
            let mean_top1 = results.iter().map(|r| r.top1).sum::<f64>() / results.len() as f64;
            cells.push(SuiteCell {
                fraction,
                mode,
                mean_f1,
                sd_f1,
                mean_top1,
                per_replicate: results,
            });
        }
    }
    Ok(LabelEfficiencyReport { cells })
}
