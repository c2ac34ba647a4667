use thiserror::Error;

use crate::space::PointId;

/// Errors produced by the toolkit.
///
/// `Refusal` marks a violated precondition (bad parameters, estimator used
/// below its resolution, strainer gaps); the CLI maps it to exit status 2.
#[derive(Debug, Error)]
pub enum Error {
    #[error("no comparison triangle exists: {0}")]
    NoTriangle(String),

    #[error("comparison angle undefined: {0}")]
    UndefinedAngle(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("unknown point id {0}")]
    UnknownId(PointId),

    #[error("refused: {0}")]
    Refusal(String),

    #[error("gradient curve stalled at point {at}: {reason}")]
    Stalled { at: PointId, reason: String },

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn is_refusal(&self) -> bool {
        matches!(self, Error::Refusal(_))
    }
}

pub(crate) fn refuse<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Refusal(msg.into()))
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
