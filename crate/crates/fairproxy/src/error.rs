//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by any stage of the pipeline.
#[derive(Debug, Error)]
pub enum Error {
    /// A line in an input file could not be parsed.
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    /// Input disagrees with the declared schema.
    #[error("schema error: {0}")]
    Schema(String),

    /// Matrix/vector dimensions do not line up.
    #[error("shape mismatch in {op}: expected {expected}, got {got}")]
    Shape {
        op: &'static str,
        expected: String,
        got: String,
    },

    /// Invalid configuration value.
    #[error("config error: {0}")]
    Config(String),

    /// Training produced a non-finite quantity.
    #[error("numeric failure: {0}")]
    Numeric(String),

    /// A metric is undefined on the given inputs (e.g. an empty group).
    #[error("metric undefined: {0}")]
    Undefined(String),

    /// Clustering degenerated (e.g. a single effective cluster).
    #[error("degenerate clustering: {0}")]
    Degenerate(String),

    /// A persisted artifact is missing or inconsistent.
    #[error("artifact error: {0}")]
    Artifact(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn shape(op: &'static str, expected: impl Into<String>, got: impl Into<String>) -> Self {
        Error::Shape {
            op,
            expected: expected.into(),
            got: got.into(),
        }
    }
}
