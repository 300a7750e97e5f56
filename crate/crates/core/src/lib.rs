//! Contrastive self-supervised pretraining with temporal positives and
//! false-negative masking, together with the tooling needed to measure label
//! efficiency downstream: linear probing / finetuning on label fractions and a
//! detection evaluation kit (tiling, nested subsampling, IoU-0 matching, AP).
//!
//! Module map:
//!
//! - [`dataspec`]: temporally grouped image manifests, pair sampling, stratified
//!   label subsets and a synthetic temporal scene generator.
//! - [`augment`]: two-view augmentation pipeline with dihedral transforms.
//! - [`nn`]: the small convolutional encoder and its hand-written backward pass.
//! - [`moco`]: momentum encoder, identity-tagged memory queue, InfoNCE and the
//!   masked variant, pretraining loop and checkpoints.
//! - [`probe`]: frozen linear probing, finetuning, macro-F1, label-efficiency suite.
//! - [`detkit`]: detection-side dataset engineering and metrics.

pub mod augment;
pub mod dataspec;
pub mod detkit;
mod error;
pub mod image;
pub mod moco;
pub mod nn;
pub mod probe;
pub mod rng;

pub use error::{Error, Result};
