use thiserror::Error;

/// Errors raised by the estimation and testing routines.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum HdfpError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("singular system: {0}")]
    Singular(String),

    #[error("inference error: {0}")]
    Inference(String),

    #[error("numerical failure: {0}")]
    Numerical(String),
}

impl HdfpError {
    /// True for errors caused by bad input or configuration rather than by the numerics.
    pub fn is_usage(&self) -> bool {
        matches!(
            self,
            HdfpError::InvalidArgument(_) | HdfpError::DimensionMismatch(_) | HdfpError::Config(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, HdfpError>;

macro_rules! ensure {
    ($cond:expr, $variant:ident, $($arg:tt)+) => {
        if !$cond {
            return Err($crate::error::HdfpError::$variant(format!($($arg)+)));
        }
    };
}
pub(crate) use ensure;
