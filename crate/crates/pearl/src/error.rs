use std::path::PathBuf;

pub type Result<T, E = PearlError> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum PearlError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Compute(#[from] pearl_core::Error),
}

impl PearlError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        PearlError::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        PearlError::Format {
            path: path.into(),
            message: message.into(),
        }
    }

    /// 1 for failures inside a computation, 2 for usage, configuration and
    /// file problems.
    pub fn exit_code(&self) -> i32 {
        match self {
            PearlError::Compute(_) => 1,
            _ => 2,
        }
    }
}
