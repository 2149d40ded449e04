//! Crate-wide error type.

use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A parameter or argument is outside its mathematical domain.
    #[error("domain error: {0}")]
    Domain(String),

    /// The untreated steady state does not exist (requires R0 > 1).
    #[error("infeasible steady state: V0 = {v0} <= 0, basic reproductive ratio must exceed 1")]
    InfeasibleSteadyState { v0: f64 },

    /// The integrator exhausted its step budget or the step size underflowed.
    #[error("integrator failed to converge near t = {t}: {detail}")]
    ConvergenceFailure { t: f64, detail: String },

    /// The trajectory left the representable range.
    #[error("trajectory diverged near t = {t}")]
    Divergence { t: f64 },

    /// A model evaluation produced an unusable value.
    #[error("evaluation error: {0}")]
    Evaluation(String),

    /// A matrix that must be positive definite was not.
    #[error("linear algebra failure: {0}")]
    LinearAlgebra(String),

    /// Not enough observations to carry out the requested computation.
    #[error("insufficient data: {0}")]
    InsufficientData(String),

    /// Correlation is undefined, e.g. a constant input vector.
    #[error("undefined correlation: {0}")]
    UndefinedCorrelation(String),

    /// A data file failed to parse; `line` is 1-based and counts the header.
    #[error("{path}:{line}: {msg}")]
    Parse { path: PathBuf, line: usize, msg: String },

    /// Records from different input files could not be joined.
    #[error("inconsistent inputs for subject {subject}: {msg}")]
    Join { subject: String, msg: String },

    /// Configuration file or flag value is invalid.
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
