use std::path::PathBuf;

/// Errors raised by the filtering toolkit.
#[derive(Debug, thiserror::Error)]
pub enum NhfError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("singular block {block} in block-diagonal inverse")]
    SingularBlock { block: usize },

    #[error("matrix is not positive definite: {0}")]
    NotPositiveDefinite(&'static str),

    #[error("filter diverged: {0}")]
    Diverged(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("I/O error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("serialization error at {path}: {message}")]
    Serialization { path: PathBuf, message: String },
}

pub type Result<T> = std::result::Result<T, NhfError>;

impl NhfError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        NhfError::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        NhfError::InvalidArgument(msg.into())
    }
}

pub(crate) fn check_len(context: &'static str, expected: usize, actual: usize) -> Result<()> {
    if expected != actual {
        return Err(NhfError::DimensionMismatch {
            context,
            expected,
            actual,
        });
    }
    Ok(())
}
