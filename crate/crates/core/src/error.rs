//! Crate-wide error type.
//!
//! Numeric routines report domain violations instead of returning NaN so
//! that a bad hyperparameter or a diverged optimizer surfaces at the call
//! site that caused it, not three modules later.

use std::fmt;

#[derive(Debug)]
pub enum Error {
    /// Argument outside the mathematical domain of the operation.
    Domain(String),
    /// Dimension mismatch between arguments.
    Shape(String),
    /// Operation invoked against an object in the wrong state
    /// (e.g. a backward pass with a stale forward cache).
    State(String),
    /// Non-finite value produced where a finite one is required.
    Numeric(String),
    /// Beta-process prior parameters are inconsistent (e.g. gamma >= K).
    InvalidPrior(String),
    /// Malformed file content; the message names the byte offset when known.
    Format(String),
    /// Checkpoint written by an incompatible format version.
    Version { found: u32, expected: u32 },
    /// Bad run configuration (unknown key, unparsable value, missing input).
    Config(String),
    Io(std::io::Error),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Domain(m) => write!(f, "domain error: {m}"),
            Error::Shape(m) => write!(f, "shape error: {m}"),
            Error::State(m) => write!(f, "state error: {m}"),
            Error::Numeric(m) => write!(f, "numeric error: {m}"),
            Error::InvalidPrior(m) => write!(f, "invalid prior: {m}"),
            Error::Format(m) => write!(f, "format error: {m}"),
            Error::Version { found, expected } => {
                write!(f, "incompatible checkpoint version {found} (expected {expected})")
            }
            Error::Config(m) => write!(f, "config error: {m}"),
            Error::Io(e) => write!(f, "io error: {e}"),
        }
    }
}

impl std::error::Error for Error {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            Error::Io(e) => Some(e),
            _ => None,
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e)
    }
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Prefix an error with iteration context while keeping its kind.
    pub(crate) fn at_iteration(self, t: u64) -> Error {
        let wrap = |m: String| format!("iteration {t}: {m}");
        match self {
            Error::Domain(m) => Error::Domain(wrap(m)),
            Error::Shape(m) => Error::Shape(wrap(m)),
            Error::State(m) => Error::State(wrap(m)),
            Error::Numeric(m) => Error::Numeric(wrap(m)),
            other => other,
        }
    }
}
