//! Experiment orchestration for `tempcon`: one JSON config per experiment,
//! seeded commands that write deterministic artifacts into its output
//! directory.

pub mod commands;
pub mod config;

pub use commands::*;
pub use config::{DatasetSection, DatasetSource, DetkitSection, ExperimentConfig, PretrainSection};

use tempcon::Error;

/// Process exit status for an error: 1 for invalid input, 2 for failures
/// while running.
pub fn exit_code(err: &Error) -> i32 {
    match err.root() {
        Error::Validation(_) | Error::Format { .. } | Error::Precondition(_) | Error::Incompatible(_) => 1,
        Error::Io { .. } | Error::ImageLoad { .. } | Error::Contract(_) | Error::Context { .. } => 2,
    }
}
