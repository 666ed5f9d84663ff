use thiserror::Error;

/// Errors raised by the simulator and solvers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("numerically singular system: {0}")]
    Singular(String),

    /// A solver produced NaN/inf; carries the trace collected so far.
    #[error("non-finite value in {stage} at iteration {iter}")]
    NonFinite { stage: String, iter: usize },

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
