//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by the library.
#[derive(Debug, Error)]
pub enum Error {
    /// A value outside the mathematical domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// A documented precondition does not hold.
    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("index {index} out of range 1..={len}")]
    IndexOutOfRange { index: usize, len: usize },

    /// Mismatched lengths or matrix shapes.
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("empty input: {0}")]
    Empty(&'static str),

    /// The forward cache was produced by different parameters.
    #[error("stale forward cache: cache generation {cache}, parameter generation {params}")]
    StaleCache { cache: u64, params: u64 },

    /// Training produced a non-finite loss.
    #[error("training diverged at epoch {epoch}, step {step}: loss = {loss}")]
    Diverged {
        epoch: usize,
        step: usize,
        loss: f64,
        /// Per-epoch mean losses of every completed epoch.
        trace: Vec<f64>,
    },

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("mismatch: {0}")]
    Mismatch(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Wav(#[from] hound::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
