use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum RegimeError {
    /// Invalid configuration or inconsistent inputs (bad shapes, infeasible
    /// constraint sets, malformed instance specs).
    #[error("configuration error: {0}")]
    Config(String),

    /// A documented precondition of an operation was violated.
    #[error("precondition violated: {0}")]
    Precondition(String),

    /// Text-format parsing failed.
    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, RegimeError>;

impl RegimeError {
    pub fn config(msg: impl Into<String>) -> Self {
        RegimeError::Config(msg.into())
    }

    pub fn precondition(msg: impl Into<String>) -> Self {
        RegimeError::Precondition(msg.into())
    }
}
