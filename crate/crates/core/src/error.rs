//! Error type shared by every module.

use thiserror::Error;

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, FimError>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FimError {
    #[error("matrix is not positive definite ({0})")]
    NotPositiveDefinite(String),
    #[error("non-finite evaluation: {0}")]
    NonFiniteEvaluation(String),
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("mixture density underflows to zero at observation {index}")]
    DegenerateMixture { index: usize },
    #[error("innovation variance {variance} is not positive at time {t}")]
    SingularInnovation { t: usize, variance: f64 },
    #[error("Hessian is singular and gradient fallback made no progress")]
    SingularHessian,
    #[error("solver did not converge after {iterations} iterations (gradient norm {grad_norm:e})")]
    NotConverged { iterations: usize, grad_norm: f64 },
    #[error("no candidates supplied")]
    EmptyCandidates,
    #[error("perturbation component {index} is zero")]
    ZeroPerturbationComponent { index: usize },
    #[error("invalid perturbation distribution: {0}")]
    InvalidDistribution(String),
    #[error("model observations are not independent")]
    NotIndependentData,
    #[error("reference matrix has zero norm")]
    ZeroReference,
    #[error("{failed} of {total} replications failed (limit {limit})")]
    TooManyFailures {
        failed: usize,
        total: usize,
        limit: usize,
    },
    #[error("unknown experiment '{0}'")]
    UnknownExperiment(String),
    #[error("invalid override '{key}': {reason}")]
    InvalidOverride { key: String, reason: String },
    #[error("config error: {0}")]
    Config(String),
    #[error("i/o failure: {0}")]
    Io(String),
}

impl FimError {
    /// True for errors caused by the experiment configuration rather than the study itself.
    pub fn is_config_error(&self) -> bool {
        matches!(
            self,
            FimError::UnknownExperiment(_) | FimError::InvalidOverride { .. } | FimError::Config(_)
        )
    }
}

impl From<std::io::Error> for FimError {
    fn from(e: std::io::Error) -> Self {
        FimError::Io(e.to_string())
    }
}
