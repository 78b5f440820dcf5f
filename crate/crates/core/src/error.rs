use alloc::string::String;

/// Errors raised by the core library.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    /// Invalid sizes, parameters or mismatched dimensions.
    #[error("configuration error: {0}")]
    Config(String),
    /// Malformed inputs to an operation (empty trajectory, missing columns).
    #[error("input error: {0}")]
    Input(String),
    /// A numerical routine failed to reach its residual target.
    #[error("numerical failure in {what}: residual {residual:e}")]
    Numerical { what: String, residual: f64 },
    /// A consistency check found a violated identity.
    #[error("check failed: {0}")]
    Check(String),
}

pub type Result<T> = core::result::Result<T, Error>;

pub(crate) fn config(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

pub(crate) fn input(msg: impl Into<String>) -> Error {
    Error::Input(msg.into())
}
