use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the search engine, agent gateway, and harness.
#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("template `{template}`: unbound placeholder `{placeholder}`")]
    UnboundPlaceholder { template: String, placeholder: String },

    #[error("template `{0}` not found")]
    TemplateNotFound(String),

    #[error("agent `{agent}`: backend failure: {message}")]
    Backend { agent: String, message: String },

    #[error("no candidate produced an extractable answer")]
    VoteFailure,

    #[error("{path}: line {line}: malformed dataset record: {message}")]
    Dataset {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
