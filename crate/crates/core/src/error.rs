use alloc::string::String;
use core::fmt;

/// Errors surfaced by the engine. Shape errors identify the op site so a
/// failing length plan can be traced to the layer that rejected its input.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Error {
    /// An operation received tensors whose shapes violate its contract.
    Shape { op: &'static str, detail: String },
    /// A model or plan configuration is invalid or infeasible.
    Config(String),
    /// A runtime contract was violated (e.g. cached mode without caches).
    Contract(String),
    /// A NaN or infinity was produced or encountered.
    NonFinite { op: &'static str },
    /// Input data is unusable (e.g. an all-zero ESR reference).
    Data(String),
}

pub type Result<T> = core::result::Result<T, Error>;

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Shape { op, detail } => write!(f, "shape error in `{op}`: {detail}"),
            Error::Config(msg) => write!(f, "configuration error: {msg}"),
            Error::Contract(msg) => write!(f, "contract violation: {msg}"),
            Error::NonFinite { op } => write!(f, "non-finite value in `{op}`"),
            Error::Data(msg) => write!(f, "data error: {msg}"),
        }
    }
}

impl core::error::Error for Error {}

macro_rules! shape_err {
    ($op:expr, $($arg:tt)*) => {
        $crate::Error::Shape { op: $op, detail: alloc::format!($($arg)*) }
    };
}
pub(crate) use shape_err;
