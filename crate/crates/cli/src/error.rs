use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad or unreadable input: exit code 2.
    #[error("configuration error: {0}")]
    Config(String),
    /// A module reported a failure: exit code 1.
    #[error("computation failed: {0}")]
    Compute(String),
    #[error("cannot write {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Compute(_) | CliError::Io { .. } => 1,
        }
    }
}

macro_rules! compute_from {
    ($($t:ty),*) => {$(
        impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                CliError::Compute(e.to_string())
            }
        }
    )*};
}

compute_from!(
    ionarray::fields::FieldError,
    ionarray::trap::TrapError,
    ionarray::control::ControlError,
    ionarray::rfshape::ShapeError,
    ionarray::dynamics::DynamicsError,
    ionarray::waveform::WaveformError
);
