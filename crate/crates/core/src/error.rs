use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("record {index}: {message}")]
    MalformedRecord { index: usize, message: String },

    #[error("duplicate document id `{0}`")]
    DuplicateDocument(String),

    #[error("duplicate passage id `{0}`")]
    DuplicatePassage(String),

    #[error("query `{query_id}` references unknown passage `{passage_id}`")]
    UnknownPassage { query_id: String, passage_id: String },

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("invalid {format} data: {message}")]
    Format { format: &'static str, message: String },

    #[error("completion backend error: {0}")]
    Backend(String),

    #[error("missing input file `{}`", .0.display())]
    MissingInput(PathBuf),

    #[error("usage: {0}")]
    Usage(String),
}

impl Error {
    pub(crate) fn invalid(message: impl Into<String>) -> Self {
        Error::InvalidInput(message.into())
    }

    pub(crate) fn format(format: &'static str, message: impl Into<String>) -> Self {
        Error::Format {
            format,
            message: message.into(),
        }
    }
}
