//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// A dataset or set argument was empty where at least one element is required.
    #[error("empty input: {0}")]
    Empty(&'static str),

    /// Vector or matrix dimensions do not match what the operation expects.
    #[error("dimension mismatch: {context} (expected {expected}, got {got})")]
    DimMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    /// An invariant on a domain type was violated at construction time.
    #[error("invalid {what}: {why}")]
    Invalid { what: &'static str, why: String },

    /// Training produced a non-finite loss.
    #[error("training diverged at step {step}: non-finite loss")]
    Diverged { step: usize },

    /// A required optional argument was missing.
    #[error("missing argument: {0}")]
    Missing(&'static str),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    /// Container file is malformed or has an unsupported schema version.
    #[error("container format error: {0}")]
    Format(String),

    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
