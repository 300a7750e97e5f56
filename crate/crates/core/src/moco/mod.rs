//! Momentum contrast with temporal positives.
//!
//! A query encoder is trained with InfoNCE to match each query view to the
//! key of a temporal positive (another acquisition of the same location),
//! against negatives drawn from a queue of past keys. Keys come from a
//! momentum encoder whose weights track the query encoder by EMA. Queue
//! entries produced by the query's own location are masked out of the
//! denominator, since they are views of the same scene and not negatives.

mod checkpoint;
mod loss;
mod queue;
mod train;

use serde::{Deserialize, Serialize};

use crate::nn::{BackboneConfig, EncoderArch, ParamSet};
use crate::{Error, Result};

pub use checkpoint::{checkpoint_load, checkpoint_save, Checkpoint, CHECKPOINT_VERSION};
pub use loss::{
    info_nce, info_nce_with_grad, masked_info_nce, masked_info_nce_with_grad, queue_info_nce_with_grad,
};
pub use queue::MemoryQueue;
pub use train::{pretrain, write_training_log, EpochLog, PretrainOutcome, Pretrainer};

/// Tolerance on the norm of a unit embedding.
pub const UNIT_NORM_TOL: f64 = 1e-5;

/// A unit-norm embedding vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    vector: Vec<f64>,
}

impl Embedding {
    /// Normalizes `v` to unit length.
    pub fn normalized(mut v: Vec<f64>) -> Result<Self> {
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if !(norm > 0.0 && norm.is_finite()) {
            return Err(Error::Contract("cannot normalize a zero or non-finite vector".into()));
        }
        v.iter_mut().for_each(|x| *x /= norm);
        Ok(Self { vector: v })
    }

    pub fn from_f32(v: &[f32]) -> Result<Self> {
        Self::normalized(v.iter().map(|x| f64::from(*x)).collect())
    }

    /// Wraps a vector that must already be unit-norm.
    pub fn from_unit(v: Vec<f64>) -> Result<Self> {
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if (norm - 1.0).abs() > UNIT_NORM_TOL {
            return Err(Error::Contract(format!("embedding norm {norm} is not 1")));
        }
        Ok(Self { vector: v })
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.vector
    }

    pub fn dim(&self) -> usize {
        self.vector.len()
    }

    pub fn dot(&self, other: &Embedding) -> f64 {
        self.vector.iter().zip(&other.vector).map(|(a, b)| a * b).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LrSchedule {
    Cosine,
    Constant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ContrastiveConfig {
    pub temperature: f64,
    pub queue_size: usize,
    /// EMA momentum of the key encoder.
    pub ema_momentum: f64,
    pub base_lr: f64,
    pub schedule: LrSchedule,
    pub batch_size: usize,
    pub optimizer_momentum: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub embedding_dim: usize,
    pub backbone: BackboneConfig,
    /// Exclude queue entries from the query's own location.
    pub mask_false_negatives: bool,
    /// Also use the temporal view as a query against the original.
    pub symmetric: bool,
}

impl Default for ContrastiveConfig {
    fn default() -> Self {
        Self {
            temperature: 0.2,
            queue_size: 65536,
            ema_momentum: 0.999,
            base_lr: 3e-2,
            schedule: LrSchedule::Cosine,
            batch_size: 256,
            optimizer_momentum: 0.9,
            weight_decay: 1e-4,
            epochs: 200,
            embedding_dim: 64,
            backbone: BackboneConfig::default(),
            mask_false_negatives: true,
            symmetric: false,
        }
    }
}

impl ContrastiveConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0) {
            return Err(Error::Validation("temperature must be positive".into()));
        }
        // 1.0 freezes the key encoder; allowed for diagnostics.
        if !(0.0..=1.0).contains(&self.ema_momentum) {
            return Err(Error::Validation("ema_momentum must lie in [0, 1]".into()));
        }
        if self.batch_size == 0 || self.queue_size == 0 || self.epochs == 0 {
            return Err(Error::Validation(
                "batch_size, queue_size and epochs must be positive".into(),
            ));
        }
        if !self.queue_size.is_multiple_of(self.batch_size) {
            return Err(Error::Validation(format!(
                "queue_size {} must be a multiple of batch_size {}",
                self.queue_size, self.batch_size
            )));
        }
        if self.base_lr < 0.0 || self.weight_decay < 0.0 || self.optimizer_momentum < 0.0 {
            return Err(Error::Validation(
                "learning rate, weight decay and momentum must be non-negative".into(),
            ));
        }
        Ok(())
    }

    pub fn encoder_arch(&self, input_size: usize) -> EncoderArch {
        EncoderArch {
            backbone: self.backbone.clone(),
            embedding_dim: self.embedding_dim,
            input_size,
        }
    }
}

/// Query encoder parameters and their momentum (key) copy.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderState {
    pub arch: EncoderArch,
    pub query: ParamSet,
    pub key: ParamSet,
}

impl EncoderState {
    /// Fresh query encoder; the key encoder starts as an exact copy.
    pub fn init<R: rand::Rng + ?Sized>(arch: EncoderArch, rng: &mut R) -> Result<Self> {
        arch.validate()?;
        let query = arch.init_params(rng);
        Ok(Self {
            arch,
            key: query.clone(),
            query,
        })
    }
}

/// `key <- m * key + (1 - m) * query`, elementwise; the query is untouched.
pub fn ema_update(state: &mut EncoderState, momentum: f64) -> Result<()> {
    state.query.check_layout(&state.key)?;
    if !(0.0..=1.0).contains(&momentum) {
        return Err(Error::Contract(format!("EMA momentum {momentum} outside [0, 1]")));
    }
    for (k, q) in state.key.iter_mut().zip(state.query.iter()) {
        for (kv, qv) in k.data.iter_mut().zip(&q.data) {
            *kv = ema_value(*kv, *qv, momentum);
        }
    }
    Ok(())
}

/// Single-value EMA in `f64`, rounded once to `f32`.
#[inline]
pub fn ema_value(key: f32, query: f32, momentum: f64) -> f32 {
    (momentum * f64::from(key) + (1.0 - momentum) * f64::from(query)) as f32
}

/// Half-cosine decay from `base_lr` at step 0 to 0 at `total_steps`.
pub fn cosine_lr(step: usize, total_steps: usize, base_lr: f64) -> f64 {
    assert!(total_steps > 0, "total_steps must be positive");
    let t = step.min(total_steps) as f64 / total_steps as f64;
    base_lr * 0.5 * (1.0 + (std::f64::consts::PI * t).cos())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Param;

    fn scalar_state(k: f32, q: f32) -> EncoderState {
        let arch = EncoderArch {
            backbone: BackboneConfig::default(),
            embedding_dim: 1,
            input_size: 16,
        };
        let p = |v| ParamSet::new(vec![Param { name: "w".into(), shape: vec![1], data: vec![v] }]);
        EncoderState { arch, query: p(q), key: p(k) }
    }

    #[test]
    fn ema_arithmetic() {
        let mut s = scalar_state(2.0, 4.0);
        ema_update(&mut s, 0.999).unwrap();
        assert!((s.key.index(0).data[0] - 2.002).abs() < 1e-6);
        assert_eq!(s.query.index(0).data[0], 4.0);

        let mut s = scalar_state(2.0, 4.0);
        ema_update(&mut s, 0.0).unwrap();
        assert_eq!(s.key, s.query);

        let mut s = scalar_state(2.0, 4.0);
        ema_update(&mut s, 1.0).unwrap();
        assert_eq!(s.key.index(0).data[0], 2.0);
    }

    #[test]
    fn ema_converges_geometrically() {
        let m = 0.5;
        let mut s = scalar_state(0.0, 1.0);
        let mut gap = 1.0f64;
        for _ in 0..3 {
            ema_update(&mut s, m).unwrap();
            let new_gap = f64::from((s.query.index(0).data[0] - s.key.index(0).data[0]).abs());
            assert!((new_gap - m * gap).abs() < 1e-7);
            gap = new_gap;
        }
    }

    #[test]
    fn ema_rejects_shape_mismatch() {
        let mut s = scalar_state(0.0, 1.0);
        s.key.index_mut(0).shape = vec![2];
        assert!(matches!(ema_update(&mut s, 0.9), Err(Error::Contract(_))));
    }

    #[test]
    fn cosine_schedule_points() {
        assert_eq!(cosine_lr(0, 100, 0.03), 0.03);
        assert!(cosine_lr(100, 100, 0.03).abs() < 1e-12);
        assert!((cosine_lr(50, 100, 0.03) - 0.015).abs() < 1e-12);
        let mut prev = f64::INFINITY;
        for s in 0..=100 {
            let lr = cosine_lr(s, 100, 1.0);
            assert!(lr <= prev);
            prev = lr;
        }
    }

    #[test]
    fn config_defaults_and_validation() {
        let c = ContrastiveConfig::default();
        assert_eq!(
            (c.temperature, c.queue_size, c.ema_momentum, c.base_lr, c.batch_size),
            (0.2, 65536, 0.999, 3e-2, 256)
        );
        assert_eq!((c.optimizer_momentum, c.weight_decay, c.epochs), (0.9, 1e-4, 200));
        assert!(c.validate().is_ok());
        let bad = ContrastiveConfig { queue_size: 1000, ..c.clone() };
        assert!(bad.validate().is_err());
        let bad = ContrastiveConfig { temperature: 0.0, ..c };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn embedding_constructors() {
        let e = Embedding::normalized(vec![3.0, 4.0]).unwrap();
        assert_eq!(e.as_slice(), &[0.6, 0.8]);
        assert!(Embedding::normalized(vec![0.0, 0.0]).is_err());
        assert!(Embedding::from_unit(vec![1.0, 1.0]).is_err());
        assert!(Embedding::from_unit(vec![0.6, 0.8]).is_ok());
    }
}
