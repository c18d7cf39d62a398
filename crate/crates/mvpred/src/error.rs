use crate::numerics::NumericsError;

/// Crate-wide error type.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Caller misuse: bad arguments, empty inputs, invalid config.
    #[error("usage error: {0}")]
    Usage(String),
    /// Problems with ingested data: malformed manifests, bad dims, corrupt bundles.
    #[error("data error: {0}")]
    Data(String),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn usage(msg: impl Into<String>) -> Self {
        Error::Usage(msg.into())
    }

    pub fn data(msg: impl Into<String>) -> Self {
        Error::Data(msg.into())
    }
}
