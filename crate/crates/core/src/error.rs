use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParam { name: &'static str, reason: String },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("empty codebook")]
    EmptyCodebook,

    #[error("beam index {index} outside codebook of size {size}")]
    BeamOutOfRange { index: usize, size: usize },

    #[error("delay tap {tap} outside [0, {max})")]
    TapOutOfRange { tap: usize, max: usize },

    #[error("class id {class_id} not below class count {classes}")]
    ClassOutOfRange { class_id: usize, classes: usize },

    #[error("channel is not flat across subcarriers")]
    NotFlat,

    #[error("empty training set")]
    EmptyTrainingSet,

    #[error("invalid protocol state: {0}")]
    ProtocolState(String),

    #[error("parse error at line {line}: {reason}")]
    Parse { line: usize, reason: String },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParam {
        name,
        reason: reason.into(),
    }
}
