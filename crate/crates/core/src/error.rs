use std::fmt;

/// Errors produced anywhere in the library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("{what} did not converge after {iterations} iterations (residual {residual:.3e})")]
    NonConvergence {
        what: String,
        iterations: usize,
        residual: f64,
    },
    #[error("solver diverged: duality gap {gap:.3e} exceeded limit {limit:.3e}")]
    Divergence { gap: f64, limit: f64 },
    #[error("config error at line {line}: {message}")]
    Config { line: usize, message: String },
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    /// A failure while reading an input file, tagged with its path.
    #[error("{path}: {source}")]
    Input {
        path: String,
        #[source]
        source: Box<Error>,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn invalid(msg: impl fmt::Display) -> Self {
        Error::InvalidArgument(msg.to_string())
    }

    pub(crate) fn unsupported(msg: impl fmt::Display) -> Self {
        Error::Unsupported(msg.to_string())
    }

    pub(crate) fn no_convergence(what: impl fmt::Display, iterations: usize, residual: f64) -> Self {
        Error::NonConvergence {
            what: what.to_string(),
            iterations,
            residual,
        }
    }
}
