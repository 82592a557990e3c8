use std::path::PathBuf;

use thiserror::Error;

/// Failures while reading IDX image/label files.
#[derive(Debug, Error)]
pub enum IdxError {
    #[error("{path}: bad magic 0x{found:08x}, expected 0x{expected:08x}")]
    BadMagic {
        path: PathBuf,
        found: u32,
        expected: u32,
    },
    #[error("{path}: truncated, need {needed} bytes but file has {actual}")]
    Truncated {
        path: PathBuf,
        needed: usize,
        actual: usize,
    },
    #[error("image count {images} does not match label count {labels}")]
    CountMismatch { images: usize, labels: usize },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Error)]
pub enum Error {
    /// Shapes, lengths or hyper-parameters that do not fit together.
    #[error("configuration error: {0}")]
    Config(String),
    /// Malformed example data (e.g. a label outside the class range).
    #[error("data error: {0}")]
    Data(String),
    /// A kernel was called with arguments outside its domain.
    #[error("usage error: {0}")]
    Usage(String),
    #[error("ingestion error: {0}")]
    Idx(#[from] IdxError),
    /// Training produced a non-finite loss.
    #[error("divergence at epoch {epoch}, step {step}: loss = {loss}")]
    Divergence { epoch: usize, step: usize, loss: f64 },
    /// A threshold-driven procedure never reached its target.
    #[error("threshold {threshold} not reached within {epochs} epochs (last accuracy {last_accuracy})")]
    ThresholdUnreached {
        threshold: f64,
        epochs: usize,
        last_accuracy: f64,
    },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Short machine-readable category, used by the CLI error JSON.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Config(_) => "config",
            Error::Data(_) => "data",
            Error::Usage(_) => "usage",
            Error::Idx(_) => "ingestion",
            Error::Divergence { .. } => "divergence",
            Error::ThresholdUnreached { .. } => "threshold_unreached",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
        }
    }
}
