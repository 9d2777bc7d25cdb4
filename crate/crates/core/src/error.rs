use thiserror::Error;

/// Errors produced by the library.
#[derive(Debug, Error)]
pub enum Error {
    /// Shapes or extents of the operands do not fit together.
    #[error("dimension error: {0}")]
    Dimension(String),

    /// An argument is outside its admissible range.
    #[error("invalid argument: {0}")]
    Argument(String),

    /// A structural precondition on an input (e.g. a network) does not hold.
    #[error("precondition failed: {0}")]
    Precondition(String),

    /// The request is well formed but too large for a dense/enumerative method.
    #[error("refused: {0}")]
    Refused(String),

    /// A computation produced NaN or infinity.
    #[error("non-finite value: {0}")]
    NonFinite(String),

    /// A file or byte stream does not follow the expected format.
    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

macro_rules! dim_err {
    ($($arg:tt)*) => { $crate::error::Error::Dimension(format!($($arg)*)) };
}
macro_rules! arg_err {
    ($($arg:tt)*) => { $crate::error::Error::Argument(format!($($arg)*)) };
}
pub(crate) use arg_err;
pub(crate) use dim_err;
