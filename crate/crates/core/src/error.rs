use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the registration pipeline and its I/O helpers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("pitch {pitch} rad is too close to ±π/2 to recover a unique Euler decomposition")]
    DegenerateOrientation { pitch: f64 },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {location}: {message}")]
    Format {
        path: PathBuf,
        location: String,
        message: String,
    },

    #[error("point {index} falls outside the representable voxel key range")]
    OutOfBounds { index: usize },

    #[error("index {index} out of range (len {len})")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("overlap region is empty")]
    EmptyOverlap,

    #[error("scans do not overlap at the initial pose or at any probed pose")]
    NoOverlap,

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("need records from at least {needed} magnitude classes, got {got}")]
    InsufficientClasses { needed: usize, got: usize },

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(
        path: impl Into<PathBuf>,
        location: impl Into<String>,
        message: impl Into<String>,
    ) -> Self {
        Error::Format {
            path: path.into(),
            location: location.into(),
            message: message.into(),
        }
    }
}
