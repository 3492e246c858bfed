use thiserror::Error;

/// Errors produced anywhere in the pipeline.
#[derive(Debug, Error)]
pub enum Error {
    /// A value violated a documented precondition.
    #[error("validation error: {0}")]
    Validation(String),

    /// Two tensors or grids had incompatible shapes.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// A binary file did not match its declared layout.
    #[error("format error at byte offset {offset}: {message}")]
    Format { offset: u64, message: String },

    /// A gradient, loss or parameter became NaN or infinite.
    #[error("non-finite value in {0}")]
    NonFinite(String),

    /// An internal consistency check failed.
    #[error("internal error: {0}")]
    Internal(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn format(offset: u64, msg: impl Into<String>) -> Self {
        Error::Format {
            offset,
            message: msg.into(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
