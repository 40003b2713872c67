use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("ingest failed for {path}: {reason}")]
    Ingest { path: PathBuf, reason: String },

    #[error("alignment error in utterance {utterance_id}: {reason}")]
    Alignment { utterance_id: String, reason: String },

    #[error("embedder error: {0}")]
    Embedder(String),

    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("invalid request: {0}")]
    InvalidRequest(String),

    #[error("frontend error: {0}")]
    Frontend(String),

    #[error("edit error: {0}")]
    Edit(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("record format error: {0}")]
    Format(String),

    #[error(transparent)]
    Tensor(#[from] candle_core::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Wav(#[from] hound::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn ingest(path: impl Into<PathBuf>, reason: impl std::fmt::Display) -> Self {
        Error::Ingest {
            path: path.into(),
            reason: reason.to_string(),
        }
    }

    pub(crate) fn alignment(id: &str, reason: impl Into<String>) -> Self {
        Error::Alignment {
            utterance_id: id.to_string(),
            reason: reason.into(),
        }
    }
}

impl Error {
    /// Errors caused by the caller's input rather than by the run itself.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::InvalidInput(_)
                | Error::InvalidConfig(_)
                | Error::InvalidRequest(_)
                | Error::Frontend(_)
                | Error::Edit(_)
        )
    }
}
