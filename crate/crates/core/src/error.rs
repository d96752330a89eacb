use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("degenerate operating point: {0}")]
    Degenerate(String),

    #[error("no convergence after {iterations} iterations (last residual {residual:e})")]
    NonConvergence { iterations: usize, residual: f64 },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("ill-conditioned H: condition number {0:e}")]
    IllConditioned(f64),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("quadrature failure: {0}")]
    Quadrature(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
