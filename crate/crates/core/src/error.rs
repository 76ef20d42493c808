use thiserror::Error;

/// Errors raised by the estimation pipeline.
#[derive(Debug, Error)]
pub enum Error {
    /// An argument lies outside the domain an operation is defined on.
    #[error("domain error: {0}")]
    Domain(String),

    /// A configuration violates one of its invariants.
    #[error("configuration error: {0}")]
    Config(String),

    /// A numerical routine failed or produced non-finite values.
    #[error("numeric error{}: {message}", iteration.map(|i| format!(" at iteration {i}")).unwrap_or_default())]
    Numeric {
        message: String,
        iteration: Option<usize>,
    },

    /// The least-squares dictionary is rank deficient.
    #[error("degenerate input: {message} (offending frequencies: {pairs:?})")]
    Degenerate {
        message: String,
        pairs: Vec<(f64, f64)>,
    },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn numeric(msg: impl Into<String>, iteration: Option<usize>) -> Self {
        Error::Numeric {
            message: msg.into(),
            iteration,
        }
    }

    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Numeric { .. } | Error::Degenerate { .. } => 3,
            _ => 2,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
