use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// An argument lies outside the domain of a function (negative range, zero smoothness, ...).
    #[error("domain error: {0}")]
    Domain(String),

    /// A model, likelihood or run configuration is inconsistent.
    #[error("configuration error: {0}")]
    Config(String),

    /// Input data failed validation on the way in.
    #[error("ingest error: {message}")]
    Ingest {
        message: String,
        indices: Vec<usize>,
    },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    /// The requested problem exceeds a hard size guard (dense paths).
    #[error("size limit exceeded: {0}")]
    Size(String),

    /// Cholesky breakdown. `pivot` is reported in the caller's original ordering.
    #[error("matrix is not positive definite (pivot {pivot}, value {value:e})")]
    NotPositiveDefinite { pivot: usize, value: f64 },

    #[error("estimation failed: {0}")]
    Estimation(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    /// True for failures of the numerics after a valid setup, as opposed to bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NotPositiveDefinite { .. } | Error::Estimation(_)
        )
    }
}
