use hdfp::HdfpError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad configuration, unreadable or malformed data, invalid arguments.
    #[error("{0}")]
    Usage(String),
    /// The computation itself failed.
    #[error("{0}")]
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Numerical(_) => 1,
        }
    }
}

impl From<HdfpError> for CliError {
    fn from(e: HdfpError) -> Self {
        if e.is_usage() {
            CliError::Usage(e.to_string())
        } else {
            CliError::Numerical(e.to_string())
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

macro_rules! usage {
    ($($arg:tt)+) => {
        $crate::error::CliError::Usage(format!($($arg)+))
    };
}
pub(crate) use usage;
