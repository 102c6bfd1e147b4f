//! Error type shared by every module in the crate.

use std::fmt;

/// Library-wide error.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// Operand shapes are incompatible for the named operation.
    Shape {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    /// An input violates an operation's contract (wrong arity, malformed
    /// labels, out-of-range parameter, ...).
    Contract(String),
    /// An input left the mathematical domain of an operation (log of a
    /// non-positive value, ...).
    Domain(String),
    /// A numeric invariant failed: NaN/Inf where finite values are required,
    /// or a solver that could not converge.
    Numeric(String),
    /// A persisted container is malformed or has the wrong version.
    Format(String),
    /// An underlying I/O failure, stringified so the error stays `Clone`.
    Io(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Shape { op, left, right } => {
                write!(f, "{op}: incompatible shapes {left:?} and {right:?}")
            }
            Error::Contract(msg) => write!(f, "contract violation: {msg}"),
            Error::Domain(msg) => write!(f, "domain error: {msg}"),
            Error::Numeric(msg) => write!(f, "numeric error: {msg}"),
            Error::Format(msg) => write!(f, "format error: {msg}"),
            Error::Io(msg) => write!(f, "io error: {msg}"),
        }
    }
}

impl std::error::Error for Error {}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
