use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid data: {0}")]
    InvalidData(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("cluster {cluster} has {available} members, {needed} requested")]
    Sampling {
        cluster: usize,
        needed: usize,
        available: usize,
    },

    #[error("no source label for pair ({first}, {second}) carrying matching mass {mass:e}")]
    Coverage {
        first: usize,
        second: usize,
        mass: f64,
    },

    #[error("training diverged at epoch {epoch}: {reason}")]
    Training { epoch: usize, reason: String },
}

impl Error {
    pub(crate) fn arg(msg: impl Into<String>) -> Self {
        Error::Argument(msg.into())
    }

    pub(crate) fn dim(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }
}
