use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },

    #[error("vector must have at least one entry")]
    EmptyVector,

    #[error("non-finite value {value} at index {index}")]
    NonFinite { index: usize, value: f64 },

    #[error("angle is undefined for a zero vector")]
    ZeroVector,

    #[error("lambda must lie in [0, 1], got {0}")]
    InvalidLambda(f64),

    #[error("rotation plane is undefined for parallel or antiparallel gradients")]
    DegenerateRotation,

    #[error("gradients do not conflict (inner product {0} >= 0)")]
    NoConflict(f64),

    #[error("invalid network dimensions: {0}")]
    InvalidDims(String),

    #[error("invalid dataset: {0}")]
    InvalidDataset(String),

    #[error("label {label} out of range for {num_classes} classes")]
    LabelOutOfRange { label: usize, num_classes: usize },

    #[error("{path}:{line}: {msg}")]
    Parse { path: PathBuf, line: usize, msg: String },

    #[error("trace entry at iteration {iter} has no gradients to replay")]
    IncompleteTrace { iter: u64 },

    #[error("target labels are required for evaluation")]
    MissingLabels,

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("non-finite {what} at iteration {iter}")]
    NumericalAbort { iter: usize, what: &'static str },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, line: usize, msg: impl Into<String>) -> Self {
        Error::Parse { path: path.into(), line, msg: msg.into() }
    }
}
