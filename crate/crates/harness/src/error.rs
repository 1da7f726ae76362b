use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Core(#[from] arbiter_core::Error),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
    #[error("invalid experiment config: {0}")]
    Config(String),
    #[error("{stage} diverged at step {step}: loss {loss}")]
    Diverged { stage: String, step: usize, loss: f64 },
    #[error("missing baseline result for seed {seed} at subset size {subset_size}")]
    MissingBaseline { seed: u64, subset_size: usize },
    #[error("{0}")]
    Invalid(String),
    #[error("wav error in {path}: {source}")]
    Wav {
        path: PathBuf,
        #[source]
        source: hound::Error,
    },
}

impl Error {
    /// Short machine-readable category for CLI error lines.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Core(_) => "core",
            Error::Io { .. } => "io",
            Error::Format { .. } => "format",
            Error::Config(_) => "config",
            Error::Diverged { .. } => "diverged",
            Error::MissingBaseline { .. } => "missing_baseline",
            Error::Invalid(_) => "invalid",
            Error::Wav { .. } => "wav",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn io_err(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> Error {
    let path = path.into();
    move |source| Error::Io { path, source }
}

pub(crate) fn format_err(path: impl Into<PathBuf>, message: impl Into<String>) -> Error {
    Error::Format {
        path: path.into(),
        message: message.into(),
    }
}
