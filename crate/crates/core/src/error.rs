//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by the laboratory.
///
/// The three variants map onto the CLI's exit-code contract: configuration
/// errors exit 2, I/O errors exit 3, validation failures exit 4.
#[derive(Debug, Error)]
pub enum Error {
    /// Malformed or inconsistent configuration (bad key, bad value, broken
    /// config invariant).
    #[error("configuration error: {0}")]
    Config(String),

    /// Filesystem failure while reading or writing an artifact.
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    /// Data or argument that violates an operation's contract (missing
    /// columns, mismatched digests, malformed artifact, bad dimensions).
    #[error("validation error: {0}")]
    Invalid(String),
}

impl Error {
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
