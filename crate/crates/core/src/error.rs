//! Error type shared across the crate.

use std::fmt;
use std::io;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug)]
pub enum Error {
    /// Malformed or incomplete configuration (missing key, unknown key, bad value).
    Config(String),
    /// A physically invalid parameter value (non-positive rate constant, probability
    /// out of range, ...).
    Domain(String),
    /// Not enough data to compute a requested statistic.
    Stats(String),
    /// Malformed trace file or CSV payload.
    Format(String),
    /// Underlying I/O failure.
    Io(io::Error),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Config(msg) => write!(f, "config error: {msg}"),
            Error::Domain(msg) => write!(f, "domain error: {msg}"),
            Error::Stats(msg) => write!(f, "statistics error: {msg}"),
            Error::Format(msg) => write!(f, "format error: {msg}"),
            Error::Io(err) => write!(f, "i/o error: {err}"),
        }
    }
}

impl std::error::Error for Error {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            Error::Io(err) => Some(err),
            _ => None,
        }
    }
}

impl From<io::Error> for Error {
    fn from(err: io::Error) -> Self {
        Error::Io(err)
    }
}
