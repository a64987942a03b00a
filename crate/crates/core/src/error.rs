use thiserror::Error;

/// Errors produced by the allocation, oracle and training code.
#[derive(Debug, Error)]
pub enum SlaError {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// A non-finite value appeared mid-computation. Non-convergence is not an
    /// error; it is reported through `SolveStatus::converged`.
    #[error("numerical failure: {0}")]
    NumericalFailure(String),

    #[error("unsupported instance: {0}")]
    Unsupported(String),

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, SlaError>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(SlaError::InvalidInput(msg.into()))
}
