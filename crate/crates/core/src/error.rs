use std::fmt;

/// Library error. Variants map onto the CLI exit-code classes:
/// configuration/usage problems, data problems, and numerical failures.
#[derive(Debug)]
pub enum Error {
    /// Operand shapes are incompatible; both shapes are spelled out.
    ShapeMismatch {
        context: &'static str,
        expected: String,
        got: String,
    },
    /// A precondition on arguments was violated.
    InvalidArgument(String),
    /// NaN/Inf encountered, divergence, or a failed numerical check.
    Numerical(String),
    /// Underlying I/O failure.
    Io(std::io::Error),
    /// Malformed file contents (checkpoint, image, dataset layout).
    Format(String),
    /// Backward called twice, non-scalar root, or a tape-state misuse.
    Autograd(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::ShapeMismatch {
                context,
                expected,
                got,
            } => write!(f, "{context}: shape mismatch, expected {expected}, got {got}"),
            Error::InvalidArgument(msg) => write!(f, "invalid argument: {msg}"),
            Error::Numerical(msg) => write!(f, "numerical failure: {msg}"),
            Error::Io(e) => write!(f, "io error: {e}"),
            Error::Format(msg) => write!(f, "format error: {msg}"),
            Error::Autograd(msg) => write!(f, "autograd error: {msg}"),
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
