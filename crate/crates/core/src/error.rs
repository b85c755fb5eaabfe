use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    Dimension { expected: usize, actual: usize },

    #[error("degenerate vector: {0}")]
    DegenerateVector(&'static str),

    #[error("invalid config field `{field}`: {reason}")]
    Config { field: String, reason: String },

    #[error("query is empty after normalization")]
    EmptyQuery,

    #[error("embedding backend: {0}")]
    EmbeddingBackend(String),

    #[error("llm backend: {0}")]
    LlmBackend(String),

    #[error("duplicate entry id {0}")]
    DuplicateId(u64),

    #[error("entry {0} not found")]
    NotFound(u64),

    #[error("storage: {0}")]
    Storage(String),

    #[error("bench input: {0}")]
    BenchInput(String),

    #[error("training: {0}")]
    Training(String),

    #[error("invalid request: {0}")]
    InvalidRequest(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    pub(crate) fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config { field: field.into(), reason: reason.into() }
    }
}
