use thiserror::Error;

/// Errors raised by the numerical kernels.
#[derive(Debug, Error)]
pub enum Error {
    /// An argument lies outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// The requested problem size exceeds a hard resource cap.
    #[error("resource error: {0}")]
    Resource(String),

    /// A required input is missing or was produced in an unusable state.
    #[error("precondition failed: {0}")]
    Precondition(String),

    /// An iterative solver did not reach its tolerance.
    #[error("no convergence after {iterations} iterations (last residual {last_residual:.3e})")]
    Convergence {
        iterations: usize,
        last_residual: f64,
        residual_history: Vec<f64>,
    },

    /// An iterative solver produced non-finite values.
    #[error("divergence: {0}")]
    Divergence(String),

    /// Malformed serialized data.
    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn domain<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Domain(msg.into()))
}
