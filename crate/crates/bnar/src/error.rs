use thiserror::Error;

/// Errors produced by the library.
///
/// The CLI maps these onto process exit codes: configuration errors exit
/// with 2, data errors with 3 and numerical blow-up in a required stage
/// with 4.
#[derive(Debug, Error)]
pub enum Error {
    /// Invalid parameters or mismatched dimensions.
    #[error("configuration error: {0}")]
    Config(String),

    /// Malformed, truncated or inconsistent data (files or in-memory arrays).
    #[error("data error: {0}")]
    Data(String),

    /// A state became non-finite or exceeded the blow-up threshold where
    /// that is not an acceptable outcome (e.g. during burn-in).
    #[error("integration error at step {step}: {message}")]
    Integration { step: usize, message: String },

    /// Failure while evaluating a reduced-model quantity.
    #[error("evaluation error: {0}")]
    Evaluation(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn data(msg: impl Into<String>) -> Self {
        Error::Data(msg.into())
    }

    pub fn evaluation(msg: impl Into<String>) -> Self {
        Error::Evaluation(msg.into())
    }
}
