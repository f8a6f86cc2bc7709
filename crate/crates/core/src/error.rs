use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("indefinite Cholesky downdate at column {column}")]
    IndefiniteDowndate { column: usize },

    #[error("triangular factor has a (near) zero diagonal entry at index {index}")]
    SingularDiagonal { index: usize },

    #[error("matrix is not positive definite (pivot {index})")]
    NotPositiveDefinite { index: usize },

    #[error("singular matrix in LU solve (column {column})")]
    SingularMatrix { column: usize },

    #[error("singular innovation covariance at step {step}")]
    SingularInnovation { step: usize },

    #[error("singular predictive covariance at step {step}")]
    SingularPredictive { step: usize },

    #[error("singular combination in associative operator")]
    CombineSingular,

    #[error("step {step}: {source}")]
    AtStep {
        step: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("iteration {iteration}: {source}")]
    AtIteration {
        iteration: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("non-finite trajectory at iteration {iteration}")]
    Divergence { iteration: usize },

    #[error("nominal trajectory did not converge after {iterations} iterations (last mean change {last_change:e})")]
    NominalNonConvergence { iterations: usize, last_change: f64 },

    #[error("tangent fixed-point iteration did not converge after {iterations} iterations (last update norm {last_update:e})")]
    TangentNonConvergence { iterations: usize, last_update: f64 },

    #[error("line search failed: {0}")]
    LineSearch(String),

    #[error("bearing undefined: target coincides with sensor {sensor}")]
    UndefinedBearing { sensor: usize },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

impl Error {
    pub fn at_step(self, step: usize) -> Error {
        Error::AtStep {
            step,
            source: Box::new(self),
        }
    }

    pub fn at_iteration(self, iteration: usize) -> Error {
        Error::AtIteration {
            iteration,
            source: Box::new(self),
        }
    }

    /// Innermost error with step/iteration annotations stripped.
    pub fn root(&self) -> &Error {
        match self {
            Error::AtStep { source, .. } | Error::AtIteration { source, .. } => source.root(),
            other => other,
        }
    }

    /// True when the failure is a loss of finiteness or definiteness, i.e. a
    /// numerical breakdown rather than a usage error.
    pub fn is_numerical(&self) -> bool {
        !matches!(
            self.root(),
            Error::Dimension(_) | Error::InvalidArgument(_) | Error::UndefinedBearing { .. }
        )
    }
}
