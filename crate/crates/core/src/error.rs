use thiserror::Error;

pub type Result<T> = std::result::Result<T, NpdeError>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NpdeError {
    #[error("grid too small: {0} points per axis (need at least 3)")]
    GridTooSmall(usize),

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: String, got: String },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("solver diverged at step {step}")]
    Diverged { step: usize },

    #[error("singular linear system: {0}")]
    Singular(String),

    #[error("non-finite loss at coordinate {index}")]
    NonFiniteLoss { index: usize },

    #[error("unsupported configuration: {0}")]
    Unsupported(String),

    #[error("io error: {0}")]
    Io(String),

    #[error("parse error: {0}")]
    Parse(String),
}

impl NpdeError {
    pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        NpdeError::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }

    pub(crate) fn shape(expected: impl ToString, got: impl ToString) -> Self {
        NpdeError::ShapeMismatch {
            expected: expected.to_string(),
            got: got.to_string(),
        }
    }
}

impl From<std::io::Error> for NpdeError {
    fn from(e: std::io::Error) -> Self {
        NpdeError::Io(e.to_string())
    }
}

impl From<serde_json::Error> for NpdeError {
    fn from(e: serde_json::Error) -> Self {
        NpdeError::Parse(e.to_string())
    }
}
