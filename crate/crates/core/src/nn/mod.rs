//! Small convolutional encoder with an explicit backward pass.
//!
//! The encoder is a stack of 3x3 conv, per-sample group normalization and
//! ReLU stages, global average pooling and a two-layer projection head with
//! batch statistics. Parameters live in a [`ParamSet`] that is
//! separate from the architecture description, so a query encoder, its
//! momentum copy and a finetuned copy can share one [`EncoderArch`].

mod encoder;
mod ops;
mod params;
mod sgd;

pub use encoder::{BackboneConfig, Batch, EncoderArch, ForwardCache};
pub use params::{Param, ParamSet};
pub use sgd::Sgd;

pub(crate) use ops::{linear_backward, linear_forward};
