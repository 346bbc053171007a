use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("dimension mismatch: expected {expected}, found {found}{}", context.as_deref().map(|c| format!(" ({c})")).unwrap_or_default())]
    DimensionMismatch {
        expected: usize,
        found: usize,
        context: Option<String>,
    },

    #[error("duplicate id {0}")]
    DuplicateId(usize),

    #[error("empty pool")]
    EmptyPool,

    #[error("invalid pool: {0}")]
    InvalidPool(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("index {index} out of range for size {len}")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("zero-norm vector at row {0}")]
    ZeroNorm(usize),

    #[error("numerical domain error: {0}")]
    NumericalDomain(String),

    #[error("no valid (target, sensitive) pair after {0} attempts")]
    NoValidPair(usize),

    #[error("exact tie in a max/min branch ({0}); resample the batch")]
    TieDetected(String),

    #[error("non-finite loss at epoch {epoch}, iteration {iteration}: {detail}")]
    NonFiniteLoss {
        epoch: usize,
        iteration: usize,
        detail: String,
    },

    #[error("no metric could be computed: {0}")]
    EmptyReport(String),

    #[error("checkpoint format error: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
