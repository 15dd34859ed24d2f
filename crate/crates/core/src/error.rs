//! Error types shared across the crate.

use thiserror::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Matrix/vector dimensions do not match what an operation requires.
    #[error("shape error: {0}")]
    Shape(String),

    /// Numeric input outside an operation's domain (NaN/inf, negative score, ...).
    #[error("domain error: {0}")]
    Domain(String),

    /// Invalid argument value (empty dims, b > B, bad class index, ...).
    #[error("argument error: {0}")]
    Argument(String),

    /// Malformed file contents (bad magic, bad header, unparsable cell).
    #[error("format error: {0}")]
    Format(String),

    /// Two inputs that must agree do not (e.g. image/label counts).
    #[error("consistency error: {0}")]
    Consistency(String),

    /// Training aborted with a diagnostic (non-finite loss or gradient).
    #[error("training aborted at iteration {iteration}: {reason}")]
    TrainingAborted { iteration: u64, reason: String },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),
}

impl Error {
    pub fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }
    pub fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }
    pub fn argument(msg: impl Into<String>) -> Self {
        Error::Argument(msg.into())
    }
    pub fn format(msg: impl Into<String>) -> Self {
        Error::Format(msg.into())
    }
    pub fn consistency(msg: impl Into<String>) -> Self {
        Error::Consistency(msg.into())
    }
}
