use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("index {index} out of range for size {size}")]
    Index { index: usize, size: usize },

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("degenerate row {row} in {tensor}: norm {norm:e}")]
    DegenerateRow { tensor: String, row: usize, norm: f64 },

    #[error("non-finite value at step {step} in {tensor}")]
    NonFinite { step: u64, tensor: String },

    #[error("gradient check failed: relative error {error:e} at {location} (tolerance {tolerance:e})")]
    GradientMismatch { error: f64, tolerance: f64, location: String },

    #[error("checkpoint integrity error at byte {offset}: {reason}")]
    Integrity { offset: u64, reason: String },

    #[error("shape manifest error: {0}")]
    ShapeManifest(String),

    #[error("byte 0x{byte:02x} is not in the vocabulary")]
    OutOfVocab { byte: u8 },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures caused by bad numerics rather than bad input.
    pub fn is_numeric(&self) -> bool {
        matches!(self, Error::NonFinite { .. } | Error::GradientMismatch { .. })
    }
}
