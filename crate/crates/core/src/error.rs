use thiserror::Error;

/// Errors produced anywhere in the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("malformed file at byte {offset}: {reason}")]
    MalformedFile { offset: u64, reason: String },

    #[error("metric undefined: {0}")]
    UndefinedMetric(&'static str),

    #[error("non-finite loss {loss} at step {step}")]
    NonFiniteLoss { step: usize, loss: f64 },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::InvalidArgument(msg.into()))
}

pub(crate) fn malformed<T>(offset: u64, reason: impl Into<String>) -> Result<T> {
    Err(Error::MalformedFile {
        offset,
        reason: reason.into(),
    })
}
