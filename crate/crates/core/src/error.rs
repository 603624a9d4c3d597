use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Errors raised by the search library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("invalid search space: {0}")]
    InvalidSpace(String),

    #[error("no feasible point found after {tries} tries")]
    Infeasible { tries: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid config key `{key}`: {message}")]
    Config { key: String, message: String },

    #[error("evaluation of request {id} failed: {message}")]
    Evaluation { id: u64, message: String },

    #[error("request {id} timed out")]
    Timeout { id: u64 },

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("evaluator session ended: {0}")]
    Session(String),

    #[error("round {round}: {source}")]
    Round {
        round: usize,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn config(key: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            message: message.into(),
        }
    }

    /// True for failures that originate in the external evaluator protocol,
    /// including ones wrapped with round context.
    pub fn is_protocol(&self) -> bool {
        match self {
            Error::Protocol(_) | Error::Timeout { .. } | Error::Session(_) => true,
            Error::Round { source, .. } => source.is_protocol(),
            _ => false,
        }
    }
}
