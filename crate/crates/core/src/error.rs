use thiserror::Error;

/// Errors raised by the numerical core.
#[derive(Debug, Error)]
pub enum KfpError {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("grid mismatch: field on {left} combined with field on {right}")]
    GridMismatch { left: String, right: String },
    #[error("potential: {0}")]
    Potential(String),
    #[error("entropy model: {0}")]
    Model(String),
    #[error("non-finite value in {context} at index {index}")]
    NonFinite { context: String, index: usize },
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("solver: {0}")]
    Solver(String),
}

pub type Result<T> = std::result::Result<T, KfpError>;
