use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("validation failed: {0}")]
    Validation(String),

    #[error("no bias score for source `{source_id}`")]
    MissingScore { source_id: String },

    #[error("model state: {0}")]
    State(String),

    #[error("not found: {0}")]
    NotFound(String),

    #[error("cannot sample from an empty set: {0}")]
    EmptySample(String),

    #[error("mean is undefined: {0}")]
    UndefinedMean(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("stage `{stage}` failed after {completed:?}: {cause}")]
    Stage {
        stage: &'static str,
        /// Stages that finished before the failure, in order.
        completed: Vec<&'static str>,
        #[source]
        cause: Box<Error>,
    },

    #[error("image `{path}`: {message}")]
    Image { path: PathBuf, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    pub(crate) fn state(msg: impl Into<String>) -> Self {
        Error::State(msg.into())
    }
}
