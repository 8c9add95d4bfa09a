use std::io;
use std::path::PathBuf;

/// Errors raised by the numerical core.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// An argument violated a documented precondition or invariant.
    #[error("validation error: {0}")]
    Validation(String),

    /// A GTED file (or byte buffer) did not follow the tensor format.
    #[error("format error: {0}")]
    Format(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn validation(msg: impl Into<String>) -> Error {
    Error::Validation(msg.into())
}

pub(crate) fn format_err(msg: impl Into<String>) -> Error {
    Error::Format(msg.into())
}

/// Returns a validation error unless `a == b`.
pub(crate) fn ensure_eq(what: &str, a: usize, b: usize) -> Result<()> {
    if a == b {
        Ok(())
    } else {
        Err(validation(format!("{what}: expected {a}, got {b}")))
    }
}
