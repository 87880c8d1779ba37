use thiserror::Error;

/// Errors produced by the bound computations and the command-line driver.
#[derive(Debug, Error)]
pub enum Error {
    /// Invalid model, measure, grid or command configuration.
    #[error("configuration error: {0}")]
    Config(String),
    /// An argument outside the domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),
    /// Non-finite values or diverging quadrature.
    #[error("numerical failure: {0}")]
    Numerical(String),
    /// A problem size beyond what exact enumeration can handle.
    #[error("resource guard: {0}")]
    Resource(String),
    /// Computed quantities violate an identity they must satisfy.
    #[error("internal inconsistency: {0}")]
    Inconsistency(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Process exit code for this error: 2 for configuration problems, 3 for
    /// numerical ones.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Domain(_) | Error::Resource(_) | Error::Json(_) => 2,
            Error::Io(_) => 2,
            Error::Numerical(_) | Error::Inconsistency(_) => 3,
        }
    }
}
