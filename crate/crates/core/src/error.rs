//! Error type shared by every module of the crate.

use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, OptincError>;

#[derive(Debug, Error)]
pub enum OptincError {
    /// An argument violated an operation's precondition.
    #[error("domain error: {0}")]
    Domain(String),

    /// Exhaustive generation was asked for a grid larger than allowed.
    #[error("exhaustive dataset of {size} samples exceeds the limit of {limit}")]
    SizeRefused { size: u128, limit: u128 },

    #[error("overflow: {0}")]
    Overflow(String),

    /// Loss or parameters became non-finite, or a numerical tolerance failed.
    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("malformed file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl OptincError {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        OptincError::Domain(msg.into())
    }

    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            OptincError::Config(_) | OptincError::Domain(_) | OptincError::SizeRefused { .. } => 2,
            OptincError::Overflow(_) | OptincError::Numeric(_) => 3,
            OptincError::Io(_) | OptincError::Format(_) => 4,
        }
    }
}
