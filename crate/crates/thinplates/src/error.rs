use thiserror::Error;

/// Errors raised by the library. The CLI maps `Input`/`Structural`/`Json`/`Io`
/// to exit code 2 and the check-type failures to exit code 1.
#[derive(Debug, Error)]
pub enum Error {
    #[error("structural error: {0}")]
    Structural(String),
    #[error("invalid input: {0}")]
    Input(String),
    #[error("mesh generation failed: {0}")]
    Mesh(String),
    #[error("linear solver failed: {0}")]
    Solver(String),
    #[error("inadmissible force: {0}")]
    Inadmissible(String),
    #[error("check failed: {0}")]
    Check(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
