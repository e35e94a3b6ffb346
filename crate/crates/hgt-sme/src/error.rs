use thiserror::Error;

/// Crate-wide error type. The CLI maps each variant to a stable category
/// string on exit.
#[derive(Debug, Error)]
pub enum Error {
    /// Invalid argument to a mathematical operation (out-of-support
    /// parameter, dimension mismatch, degenerate input).
    #[error("domain error: {0}")]
    Domain(String),

    /// A numerical routine failed (non-SPD factorization, eigensolver
    /// breakdown).
    #[error("numerical error: {0}")]
    Numerical(String),

    /// Bad input data (unknown area id, malformed cell, duplicate id).
    #[error("ingestion error: {0}")]
    Ingestion(String),

    /// Invalid configuration (inconsistent dimensions, bad key, bad value).
    #[error("config error: {0}")]
    Config(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Stable machine-parsable category for CLI error reporting.
    pub fn category(&self) -> &'static str {
        match self {
            Error::Domain(_) => "domain",
            Error::Numerical(_) => "numerical",
            Error::Ingestion(_) => "ingestion",
            Error::Config(_) => "config",
            Error::Io(_) => "io",
            Error::Csv(_) => "csv",
            Error::Json(_) => "json",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
