use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error at {key}: {message}")]
    Config { key: String, message: String },

    #[error("resource error: {0}")]
    Resource(String),

    #[error("convergence error: {0}")]
    Convergence(String),

    /// Fewer than the required share of realizations succeeded.
    #[error("partial failure: {0}")]
    Partial(String),

    #[error("{0}")]
    Other(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config { .. } => 2,
            CliError::Resource(_) => 3,
            CliError::Convergence(_) => 4,
            CliError::Partial(_) => 5,
            CliError::Other(_) => 1,
        }
    }
}

impl From<syk_core::Error> for CliError {
    fn from(e: syk_core::Error) -> Self {
        use syk_core::Error as E;
        match e {
            E::Resource(m) => CliError::Resource(m),
            E::Convergence { .. } | E::Divergence(_) => CliError::Convergence(e.to_string()),
            E::Domain(m) => CliError::Config { key: "parameters".into(), message: m },
            other => CliError::Other(other.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Other(e.to_string())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn core_errors_map_to_exit_codes() {
        let conv = syk_core::Error::Convergence { iterations: 3, last_residual: 1.0, residual_history: vec![] };
        assert_eq!(CliError::from(conv).exit_code(), 4);
        assert_eq!(CliError::from(syk_core::Error::Resource("x".into())).exit_code(), 3);
        assert_eq!(CliError::from(syk_core::Error::Domain("x".into())).exit_code(), 2);
        assert_eq!(CliError::Partial("x".into()).exit_code(), 5);
    }
}
