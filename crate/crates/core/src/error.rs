use thiserror::Error;

/// Errors produced by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("unknown passage `{0}`")]
    UnknownPassage(String),

    #[error("span mismatch in passage `{passage_id}`: {detail}")]
    SpanMismatch { passage_id: String, detail: String },

    #[error("backend failure ({context}): {message}")]
    Backend { context: String, message: String },

    #[error("illegal state transition: {0}")]
    State(String),

    #[error("rejected: {0}")]
    Rejected(String),

    #[error("stage `{stage}` failed: {message}")]
    StageFailed { stage: String, message: String },

    #[error("not found: {0}")]
    NotFound(String),

    #[error("{path}:{line}: {source}")]
    Parse {
        path: String,
        line: usize,
        #[source]
        source: serde_json::Error,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub fn backend(context: impl Into<String>, err: impl std::fmt::Display) -> Self {
        Error::Backend {
            context: context.into(),
            message: err.to_string(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
