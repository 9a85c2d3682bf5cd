use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Errors produced by the engine.
///
/// Variants are grouped by class so callers (the CLI in particular) can map
/// them onto distinct exit codes via [`Error::class`].
#[derive(Debug, Error)]
pub enum Error {
    #[error("format error at byte offset {offset}: {message}")]
    Format { offset: u64, message: String },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("missing artifact {path}: run the `{stage}` stage first")]
    MissingArtifact { path: PathBuf, stage: &'static str },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

/// Coarse error classes, stable across releases.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Format,
    Validation,
    Dependency,
    Io,
}

impl Error {
    pub fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    pub fn format(offset: u64, msg: impl Into<String>) -> Self {
        Error::Format {
            offset,
            message: msg.into(),
        }
    }

    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Format { .. } | Error::Json(_) | Error::Csv(_) => ErrorClass::Format,
            Error::Validation(_) | Error::Precondition(_) => ErrorClass::Validation,
            Error::MissingArtifact { .. } => ErrorClass::Dependency,
            Error::Io(_) => ErrorClass::Io,
        }
    }
}
