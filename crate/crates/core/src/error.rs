use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("validation failed: {0}")]
    Validation(String),

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("capacity exceeded: {0}")]
    Capacity(String),

    #[error("lookup failed: {0}")]
    Lookup(String),

    #[error("assembly failed: {0}")]
    Assembly(String),

    #[error("singular system: {0}")]
    Singular(String),

    /// Fixed-point or Newton iteration gave up; carries the last iterate.
    #[error("no convergence after {iterations} iterations (last residual {residual:.3e})")]
    NonConvergence {
        iterations: usize,
        residual: f64,
        last: Vec<f64>,
        history: Vec<f64>,
    },

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("experiment failed: {0}")]
    Experiment(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for errors caused by bad inputs rather than numerics.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Parse { .. } | Error::Validation(_) | Error::Argument(_) | Error::Lookup(_)
        )
    }
}
