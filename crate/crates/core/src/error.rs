use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, GlmError>;

/// Errors produced anywhere in the sparsification pipeline.
#[derive(Debug, Error)]
pub enum GlmError {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("non-finite entry at line {line}")]
    NonFinite { line: usize },

    #[error("dimension overflow: {0}")]
    DimensionOverflow(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("index out of range: {what} {index} (bound {bound})")]
    IndexOutOfRange {
        what: &'static str,
        index: usize,
        bound: usize,
    },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("anchor search failed for index {index}: {reason}")]
    AnchorSearch { index: usize, reason: String },

    #[error("rank deficient: {0}")]
    RankDeficient(String),

    #[error("non-finite result: {0}")]
    NonFiniteResult(String),

    #[error("no convergence after {iterations} iterations: {what}")]
    NonConvergence { what: String, iterations: usize },

    #[error("invariant violated: {0}")]
    InvariantViolation(String),

    #[error("degenerate range: {0}")]
    DegenerateRange(String),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl GlmError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        GlmError::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        GlmError::InvalidParameter(msg.into())
    }
}
