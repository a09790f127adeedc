//! Crate-wide error type.
//!
//! Every failure carries a stable machine-readable category (see
//! [`Error::category`]) so the CLI can report `error[<category>]: ...`
//! on stderr and scripts can match on it.

use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Tensor dimensions do not satisfy an operation's contract.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// A tensor id was used with a tape it does not belong to, or an
    /// id is out of range for its tape.
    #[error("lineage error: {0}")]
    Lineage(String),

    /// A mask (or a pooled region set) has no foreground pixels where
    /// at least one is required.
    #[error("empty foreground: {0}")]
    ForegroundEmpty(String),

    /// Invalid configuration value.
    #[error("invalid config: {0}")]
    Config(String),

    /// Invalid call-level input (e.g. mismatched list lengths).
    #[error("invalid input: {0}")]
    Input(String),

    /// Underlying filesystem failure.
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// File does not start with the expected magic bytes.
    #[error("bad magic in {path}: expected {expected}")]
    BadMagic { path: PathBuf, expected: String },

    /// File header declares dimensions that contradict the payload or
    /// the caller's expectation.
    #[error("dimension mismatch in {path}: {detail}")]
    DimMismatch { path: PathBuf, detail: String },

    /// File ended before the declared payload was read.
    #[error("truncated file {path}: {detail}")]
    Truncated { path: PathBuf, detail: String },

    /// Malformed manifest or report JSON.
    #[error("bad manifest {path}: {detail}")]
    Manifest { path: PathBuf, detail: String },

    /// A verification command ran to completion and found failures
    /// (e.g. a gradient over tolerance).
    #[error("check failed: {0}")]
    CheckFailed(String),
}

impl Error {
    /// Stable category tag, one per failure class.
    pub fn category(&self) -> &'static str {
        match self {
            Error::Shape(_) => "shape",
            Error::Lineage(_) => "lineage",
            Error::ForegroundEmpty(_) => "foreground-empty",
            Error::Config(_) => "config",
            Error::Input(_) => "input",
            Error::Io { .. } => "io",
            Error::BadMagic { .. } => "bad-magic",
            Error::DimMismatch { .. } => "dim-mismatch",
            Error::Truncated { .. } => "truncated",
            Error::Manifest { .. } => "manifest",
            Error::CheckFailed(_) => "check-failed",
        }
    }

}

/// Shorthand for the common "wrap an [`std::io::Error`] with its path"
/// pattern.
pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Error {
    Error::Io {
        path: path.into(),
        source,
    }
}

pub type Result<T> = std::result::Result<T, Error>;
