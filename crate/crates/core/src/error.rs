use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("signal too short: {len} samples, need at least {min}")]
    Length { len: usize, min: usize },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid corpus recipe: {0}")]
    Recipe(String),

    #[error("manifest error: {0}")]
    Manifest(String),

    #[error("noise signal has zero energy; cannot scale to a target SNR")]
    DegenerateNoise,

    #[error("reference signal has zero energy")]
    SilentReference,

    #[error("failed to load {path}: {reason}")]
    Load { path: PathBuf, reason: String },

    #[error("non-finite loss at epoch {epoch}, batch {batch}; diagnostic dump written to {dump}")]
    NonFiniteLoss {
        epoch: usize,
        batch: usize,
        dump: PathBuf,
    },

    #[error("sample-rate mismatch in {path}: expected {expected} Hz, found {found} Hz")]
    SampleRate {
        path: PathBuf,
        expected: u32,
        found: u32,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Wav(#[from] hound::Error),
}

impl Error {
    /// True for errors caused by the caller's configuration or arguments
    /// rather than by something failing at runtime.
    pub fn is_usage(&self) -> bool {
        matches!(
            self,
            Error::Config(_) | Error::Recipe(_) | Error::Manifest(_)
        )
    }
}
