//! Error type shared across the toolkit.
//!
//! The variants map onto the process exit codes used by the CLI:
//! parameter errors exit 2, format errors exit 3, degenerate-input errors
//! exit 4. I/O failures surface as a general error (exit 1).

use thiserror::Error;

pub type Result<T> = std::result::Result<T, HawkError>;

#[derive(Debug, Error)]
pub enum HawkError {
    /// A caller-supplied parameter is out of range or inconsistent.
    #[error("parameter error: {0}")]
    Parameter(String),

    /// A file or byte stream does not conform to its declared format
    /// (bad magic, unsupported version, truncation, corrupt payload).
    #[error("format error: {0}")]
    Format(String),

    /// Input is structurally valid but unusable (empty schedule, training
    /// set with a single class, window shorter than its trim counts).
    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl HawkError {
    /// Process exit code associated with this error kind.
    pub fn exit_code(&self) -> i32 {
        match self {
            HawkError::Parameter(_) => 2,
            HawkError::Format(_) => 3,
            HawkError::Degenerate(_) => 4,
            HawkError::Io(_) => 1,
        }
    }
}

pub(crate) fn param(msg: impl Into<String>) -> HawkError {
    HawkError::Parameter(msg.into())
}

pub(crate) fn format_err(msg: impl Into<String>) -> HawkError {
    HawkError::Format(msg.into())
}

pub(crate) fn degenerate(msg: impl Into<String>) -> HawkError {
    HawkError::Degenerate(msg.into())
}
