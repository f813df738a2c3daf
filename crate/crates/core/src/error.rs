use thiserror::Error;

/// Errors produced anywhere in the crate.
#[derive(Debug, Error)]
pub enum Error {
    /// An argument outside the mathematical domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),
    /// Numerical failure (singular systems, non-convergence).
    #[error("numeric error: {0}")]
    Numeric(String),
    /// Training diverged or otherwise failed.
    #[error("training error: {0}")]
    Training(String),
    /// Stateful API used out of order.
    #[error("protocol error: {0}")]
    Protocol(String),
    /// Input data does not match the expected schema.
    #[error("schema error: {0}")]
    Schema(String),
    /// A malformed data row.
    #[error("data error at row {row}: {msg}")]
    Row { row: usize, msg: String },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    /// True for failures caused by bad input data rather than numerics.
    pub fn is_data_error(&self) -> bool {
        matches!(
            self,
            Error::Schema(_) | Error::Row { .. } | Error::Io(_) | Error::Json(_) | Error::Csv(_)
        )
    }
}
