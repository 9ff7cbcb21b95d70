//! Batch front end: configuration files in, CSV and a JSON manifest out.

pub mod config;
pub mod run;

use std::fmt;

use ndnn::NdnnError;

pub use config::{bundled, bundled_experiments, Mode, RunConfig};
pub use run::{run, Manifest};

/// A failure with the process exit code it maps to.
#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

pub const EXIT_CONFIG: u8 = 2;
pub const EXIT_DIVERGENCE: u8 = 3;
pub const EXIT_EVENT: u8 = 4;

impl CliError {
    pub fn config(message: impl Into<String>) -> Self {
        CliError {
            code: EXIT_CONFIG,
            message: message.into(),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for CliError {}

impl From<NdnnError> for CliError {
    fn from(e: NdnnError) -> Self {
        let code = match &e {
            NdnnError::Config(_) | NdnnError::StepSize(_) => EXIT_CONFIG,
            NdnnError::Divergence { .. }
            | NdnnError::Inadmissible { .. }
            | NdnnError::Hyperbolicity(..) => EXIT_DIVERGENCE,
            NdnnError::Structural(_)
            | NdnnError::Collapse { .. }
            | NdnnError::Ordering { .. }
            | NdnnError::NoIntersection { .. }
            | NdnnError::DecompositionFailure(_)
            | NdnnError::Vacuum
            | NdnnError::TrackingLost { .. } => EXIT_EVENT,
            _ => 1,
        };
        CliError {
            code,
            message: e.to_string(),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError {
            code: 1,
            message: e.to_string(),
        }
    }
}
