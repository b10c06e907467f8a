use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("index {index} out of range for table `{table}` with {rows} rows")]
    IndexOutOfRange {
        table: String,
        index: usize,
        rows: usize,
    },

    #[error("loss must be a scalar, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("non-finite loss value {0}")]
    NonFiniteLoss(f64),

    #[error("non-finite gradient for parameter `{0}`")]
    NonFiniteGradient(String),

    #[error("unknown parameter `{0}`")]
    UnknownParameter(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },

    #[error("file not found: {0}")]
    MissingFile(PathBuf),

    #[error("checkpoint rejected: {0}")]
    Checkpoint(String),

    #[error("hash mismatch: expected {expected}, found {found}")]
    HashMismatch { expected: String, found: String },

    #[error("refusing to overwrite existing {0} (use --force)")]
    Exists(PathBuf),

    #[error("training diverged at epoch {epoch}, batch {batch}")]
    Diverged { epoch: usize, batch: usize },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("serialization error: {0}")]
    Serde(String),
}

impl Error {
    pub fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        let path = path.into();
        if source.kind() == std::io::ErrorKind::NotFound {
            return Error::MissingFile(path);
        }
        Error::Io { path, source }
    }

    /// Stable machine-readable code used by the command-line front end.
    pub fn code(&self) -> &'static str {
        match self {
            Error::Shape { .. } => "E_SHAPE",
            Error::IndexOutOfRange { .. } => "E_INDEX",
            Error::NonScalarLoss(_) => "E_NONSCALAR_LOSS",
            Error::NonFiniteLoss(_) => "E_NONFINITE_LOSS",
            Error::NonFiniteGradient(_) => "E_NONFINITE_GRAD",
            Error::UnknownParameter(_) => "E_UNKNOWN_PARAM",
            Error::Config(_) => "E_CONFIG",
            Error::Parse { .. } => "E_PARSE",
            Error::MissingFile(_) => "E_MISSING_FILE",
            Error::Checkpoint(_) => "E_CHECKPOINT",
            Error::HashMismatch { .. } => "E_HASH_MISMATCH",
            Error::Exists(_) => "E_EXISTS",
            Error::Diverged { .. } => "E_DIVERGED",
            Error::Io { .. } => "E_IO",
            Error::Serde(_) => "E_SERDE",
        }
    }
}
