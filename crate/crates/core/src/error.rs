use thiserror::Error;

/// Error type shared across the crate.
#[derive(Debug, Error)]
pub enum Error {
    /// Tensor or layer shape disagreement.
    #[error("shape mismatch: {0}")]
    Shape(String),
    /// Invalid configuration value or combination.
    #[error("invalid configuration: {0}")]
    Config(String),
    /// Numerically degenerate input (constant prediction, empty mask, ...).
    #[error("degenerate input: {0}")]
    Degenerate(String),
    /// NaN or infinity produced where finite values are required.
    #[error("non-finite value: {0}")]
    NonFinite(String),
    /// Persisted artifact failed validation on load.
    #[error("corrupt artifact: {0}")]
    Corrupt(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("image error: {0}")]
    Image(#[from] image::ImageError),
    /// Runtime failure that is not a configuration problem.
    #[error("{0}")]
    Runtime(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
}
