//! Crate-wide error type.
//!
//! Every error message is prefixed with the module it originated from so that
//! failures surfacing at the CLI (or deep inside the training pipeline) can be
//! traced back without a backtrace.

use std::path::PathBuf;

use thiserror::Error;

/// Convenience alias used across the crate.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A precondition on inputs was violated (bad shapes, out-of-range
    /// parameters, inconsistent dimensions, ...).
    #[error("{module}: {message}")]
    Validation {
        module: &'static str,
        message: String,
    },

    /// A file did not conform to one of the on-disk formats.
    #[error("{module}: malformed {path}: {message}")]
    Format {
        module: &'static str,
        path: PathBuf,
        message: String,
    },

    /// Underlying I/O failure, annotated with the path involved.
    #[error("{module}: {path}: {source}")]
    Io {
        module: &'static str,
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// JSON (de)serialization failure.
    #[error("{module}: {path}: {source}")]
    Json {
        module: &'static str,
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    /// PNG encode/decode failure.
    #[error("{module}: {path}: {source}")]
    Image {
        module: &'static str,
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
}

impl Error {
    pub fn validation(module: &'static str, message: impl Into<String>) -> Self {
        Error::Validation {
            module,
            message: message.into(),
        }
    }

    pub fn format(
        module: &'static str,
        path: impl Into<PathBuf>,
        message: impl Into<String>,
    ) -> Self {
        Error::Format {
            module,
            path: path.into(),
            message: message.into(),
        }
    }

    pub fn io(module: &'static str, path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            module,
            path: path.into(),
            source,
        }
    }

    pub fn json(module: &'static str, path: impl Into<PathBuf>, source: serde_json::Error) -> Self {
        Error::Json {
            module,
            path: path.into(),
            source,
        }
    }

    pub fn image(module: &'static str, path: impl Into<PathBuf>, source: image::ImageError) -> Self {
        Error::Image {
            module,
            path: path.into(),
            source,
        }
    }
}

/// Returns a [`Error::Validation`] unless `cond` holds.
macro_rules! ensure {
    ($cond:expr, $module:expr, $($arg:tt)*) => {
        if !($cond) {
            return Err($crate::error::Error::validation($module, format!($($arg)*)));
        }
    };
}

pub(crate) use ensure;
