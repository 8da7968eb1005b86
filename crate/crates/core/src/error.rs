//! Error type shared by every module in the crate.

use std::fmt;

/// Crate-wide error enum. Variants map onto the failure classes of the
/// pipeline contracts: dimension mismatches, invalid parameters, violated
/// call contracts, numeric-domain problems, and non-finite values.
#[derive(Debug)]
pub enum Error {
    /// Shapes or widths of tensor arguments do not line up.
    Dimension(String),
    /// A scalar parameter is outside its allowed range.
    Parameter(String),
    /// A caller-side contract was violated (mismatched class ids, bad index).
    Contract(String),
    /// The inputs are outside the numeric domain of the operation.
    Domain(String),
    /// An operation produced NaN or Inf.
    NonFinite { op: &'static str },
    /// The training loop produced a non-finite loss.
    Divergence { step: usize },
    /// Malformed file contents (ERRT tensors, vocabularies, configs).
    Parse(String),
    Io(std::io::Error),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Dimension(msg) => write!(f, "dimension error: {msg}"),
            Error::Parameter(msg) => write!(f, "parameter error: {msg}"),
            Error::Contract(msg) => write!(f, "contract error: {msg}"),
            Error::Domain(msg) => write!(f, "numeric-domain error: {msg}"),
            Error::NonFinite { op } => write!(f, "non-finite value produced by `{op}`"),
            Error::Divergence { step } => write!(f, "training diverged (non-finite loss) at step {step}"),
            Error::Parse(msg) => write!(f, "parse error: {msg}"),
            Error::Io(err) => write!(f, "io error: {err}"),
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

impl From<std::io::Error> for Error {
    fn from(err: std::io::Error) -> Self {
        Error::Io(err)
    }
}

pub type Result<T> = std::result::Result<T, Error>;
