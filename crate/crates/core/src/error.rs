use thiserror::Error;

/// Errors surfaced by the reconciliation engine and its tooling.
#[derive(Debug, Error)]
pub enum Error {
    /// A caller broke an operation's precondition (bad index, empty input, ...).
    #[error("usage error: {0}")]
    Usage(String),

    /// A schedule or experiment cannot be run as configured.
    #[error("configuration error: {0}")]
    Config(String),

    #[error("unknown variant `{0}`")]
    UnknownVariant(String),

    #[error("transcript error at line {line}: {message}")]
    Transcript { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn usage(msg: impl Into<String>) -> Error {
    Error::Usage(msg.into())
}

pub(crate) fn config(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}
