use thiserror::Error;

/// Errors produced by solvers, estimators and I/O helpers.
#[derive(Debug, Error)]
pub enum Error {
    /// Inconsistent sizes, grids or experiment layouts.
    #[error("configuration error: {0}")]
    Config(String),
    /// An argument outside the mathematical domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),
    /// A requested allocation exceeds the in-memory budget.
    #[error("resource limit exceeded: {0}")]
    Resource(String),
    /// A Monte Carlo experiment could not produce a usable estimate.
    #[error("experiment failed: {0}")]
    Experiment(String),
    /// Regression input that cannot be fitted.
    #[error("fit error: {0}")]
    Fit(String),
    /// Malformed tape or report file.
    #[error("parse error: {0}")]
    Parse(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
