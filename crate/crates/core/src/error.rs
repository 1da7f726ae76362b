use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("sampling failed after {attempts} attempts: {what}")]
    SamplingFailure { what: String, attempts: usize },
    #[error("could not place {what} after {attempts} attempts")]
    PlacementFailure { what: String, attempts: usize },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("sample-rate mismatch: {left} Hz vs {right} Hz")]
    SampleRateMismatch { left: u32, right: u32 },
    #[error("input signal is silent")]
    SilentInput,
    #[error("audio file error: {0}")]
    Audio(#[from] hound::Error),
    #[error("unsupported audio format: {0}")]
    UnsupportedFormat(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}

pub(crate) fn bad_config(msg: impl Into<String>) -> Error {
    Error::InvalidConfig(msg.into())
}
