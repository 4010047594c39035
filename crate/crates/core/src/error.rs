use thiserror::Error;

/// Errors raised by the library.
///
/// Configuration problems and numerical gates are kept apart so the CLI can
/// map them to distinct exit codes.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("numerical gate failed: {0}")]
    Gate(String),

    #[error("ill-conditioned difference: {what} (terms {lhs:e} and {rhs:e})")]
    IllConditioned { what: String, lhs: f64, rhs: f64 },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }

    pub fn gate(msg: impl Into<String>) -> Self {
        Error::Gate(msg.into())
    }

    /// True for failures of a numerical check rather than of the input.
    pub fn is_gate(&self) -> bool {
        matches!(self, Error::Gate(_) | Error::IllConditioned { .. })
    }
}

pub type Result<T> = std::result::Result<T, Error>;
