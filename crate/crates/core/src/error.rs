use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("forward cache does not match the network it is replayed against")]
    StaleCache,

    #[error("numeric failure: non-finite value in {0}")]
    NumericFailure(String),

    #[error("replay buffer is empty")]
    EmptyBuffer,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("oracle did not converge: {0}")]
    NoConvergence(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn non_finite(what: impl Into<String>) -> Self {
        Error::NumericFailure(what.into())
    }
}
