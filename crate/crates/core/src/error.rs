use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: malformed record: {message}")]
    Malformed {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("dangling reference: {0}")]
    DanglingId(String),

    #[error("item {id}: attr_vec has {actual} entries, schema expects {expected}")]
    DimensionMismatch {
        id: String,
        expected: usize,
        actual: usize,
    },

    #[error("item {id}: category out of range ({index} >= {category_dim})")]
    CategoryOutOfRange {
        id: String,
        index: usize,
        category_dim: usize,
    },

    #[error("invalid data: {0}")]
    InvalidData(String),

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("backward called without a recorded forward pass")]
    EmptyTape,

    #[error("index out of range: {0}")]
    IndexOutOfRange(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("topology mismatch: {0}")]
    Topology(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Short machine-readable class used by the CLI.
    pub fn class(&self) -> &'static str {
        match self {
            Error::Io { .. } => "io",
            Error::Malformed { .. } | Error::DanglingId(_) | Error::InvalidData(_) => "data",
            Error::DimensionMismatch { .. } | Error::CategoryOutOfRange { .. } => "data",
            Error::InvalidConfig(_) => "config",
            Error::Shape(_) | Error::EmptyTape | Error::IndexOutOfRange(_) => "shape",
            Error::NonFinite(_) => "numeric",
            Error::Checkpoint(_) | Error::Topology(_) => "checkpoint",
        }
    }
}
