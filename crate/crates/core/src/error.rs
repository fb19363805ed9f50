use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("input contains non-finite entries")]
    NonFinite,

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("matrix is not positive semidefinite (min eigenvalue {min}, max eigenvalue {max})")]
    NotPsd { min: f64, max: f64 },

    #[error("matrix is singular or not positive definite")]
    Singular,

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid state: {0}")]
    State(String),

    #[error("AMP diverged at iteration {iteration}: residual norm {residual:.3e} exceeds {limit:.3e}")]
    Divergence {
        iteration: usize,
        residual: f64,
        limit: f64,
    },

    #[error("quadratic form spectrum is degenerate (all eigenvalues are zero)")]
    DegenerateSpectrum,

    #[error("statistic undefined: {0}")]
    Undefined(&'static str),

    #[error("sweep aborted: {0}")]
    Aborted(String),

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("config parse error: {0}")]
    Parse(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
