use std::path::PathBuf;

use crate::extremes::GevParams;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid argument: {0}")]
    Invalid(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed tensor header: {0}")]
    MalformedHeader(String),

    #[error("truncated tensor payload: expected {expected} bytes, found {found}")]
    TruncatedPayload { expected: u64, found: u64 },

    #[error("unsupported dtype {0:?} (expected \"float32-le\")")]
    Dtype(String),

    #[error("variable {0:?} has zero standard deviation on the training split")]
    ZeroStd(String),

    #[error("GEV fit did not converge: {reason}")]
    NonConvergence { reason: String, best: GevParams },

    #[error("bootstrap failed: {failed} of {total} refits did not converge")]
    Bootstrap { failed: usize, total: usize },

    #[error("non-finite loss {value} at step {step}")]
    NonFiniteLoss { step: u64, value: f64 },

    #[error("misaligned time axes: {0}")]
    Misaligned(String),

    #[error("missing checkpoint: {0}")]
    MissingCheckpoint(PathBuf),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("plotting error: {0}")]
    Plot(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}
