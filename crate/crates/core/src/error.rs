use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Malformed serialized input. `offset` is the byte position where
    /// decoding stopped making sense.
    #[error("format error at byte {offset}: {message}")]
    Format { offset: usize, message: String },

    /// A precondition on shapes or values was violated.
    #[error("domain error: {0}")]
    Domain(String),

    /// A numerical procedure could not produce a usable result.
    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("non-finite training loss at epoch {epoch}, batch {batch}: {loss}")]
    Diverged { epoch: usize, batch: usize, loss: f64 },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn format(offset: usize, message: impl Into<String>) -> Self {
        Error::Format {
            offset,
            message: message.into(),
        }
    }

    pub(crate) fn domain(message: impl Into<String>) -> Self {
        Error::Domain(message.into())
    }
}

/// Returns a domain error unless `cond` holds.
macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err($crate::error::Error::Domain(format!($($fmt)+)));
        }
    };
}
pub(crate) use ensure;
