use thiserror::Error;

/// Errors produced anywhere in the measurement and analysis chain.
#[derive(Debug, Error)]
pub enum Error {
    /// An input lies outside the domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// A layout constraint could not be satisfied.
    #[error("constraint error: {0}")]
    Constraint(String),

    /// An iterative solver failed to converge or produced non-finite values.
    #[error("numerical error: {0}")]
    Numerical(String),

    /// Malformed, duplicated or missing packets in a capture.
    #[error("protocol error: {0}")]
    Protocol(String),

    /// Invalid configuration or file content.
    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn domain<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Domain(msg.into()))
}
