use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the toolkit.
#[derive(Debug, Error)]
pub enum XlmError {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid UTF-8 in {path} at line {line}")]
    InvalidUtf8 { path: PathBuf, line: usize },
    #[error("line-count mismatch {0} vs {1}")]
    LineCountMismatch(usize, usize),
    #[error("empty input: {0}")]
    Empty(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("token id {id} out of range for vocabulary of size {size}")]
    IdOutOfRange { id: usize, size: usize },
    #[error("malformed {what} at line {line}: {msg}")]
    Format {
        what: &'static str,
        line: usize,
        msg: String,
    },
    #[error("backward called on a consumed tape")]
    TapeConsumed,
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("config: {0}")]
    Config(String),
    #[error("{0}")]
    Usage(String),
}

pub type Result<T> = std::result::Result<T, XlmError>;

impl XlmError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        XlmError::Io {
            path: path.into(),
            source,
        }
    }

    /// Short machine-readable category used by the command-line front end.
    pub fn kind(&self) -> &'static str {
        match self {
            XlmError::Io { .. } => "io",
            XlmError::InvalidUtf8 { .. } => "utf8",
            XlmError::LineCountMismatch(..) => "line-count",
            XlmError::Empty(_) => "empty",
            XlmError::InvalidArgument(_) => "argument",
            XlmError::Shape(_) => "shape",
            XlmError::IdOutOfRange { .. } => "id-range",
            XlmError::Format { .. } => "format",
            XlmError::TapeConsumed => "tape",
            XlmError::NonFinite(_) => "non-finite",
            XlmError::Checkpoint(_) => "checkpoint",
            XlmError::Config(_) => "config",
            XlmError::Usage(_) => "usage",
        }
    }
}
