use thiserror::Error;

/// Errors raised across the pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("degenerate statistics: {0}")]
    DegenerateStatistics(String),
    #[error("quantization failed: {0}")]
    Quantization(String),
    #[error("malformed policy: {0}")]
    Policy(String),
    #[error("policy predicate not compilable: {0}")]
    Compile(String),
    #[error("encoding error: {0}")]
    Encoding(String),
    #[error("circuit exceeds capacity: {0}")]
    Capacity(String),
    #[error("not found: {0}")]
    NotFound(String),
    #[error("witness does not satisfy constraint {index} ({label})")]
    Unsatisfied { index: usize, label: String },
    #[error("unregistered model {0}")]
    Unregistered(String),
    #[error("format error: {0}")]
    Format(String),
    #[error("append failed: {0}")]
    Append(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn param<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Parameter(msg.into()))
}
