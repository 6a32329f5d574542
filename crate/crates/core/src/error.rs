use thiserror::Error;

/// Errors raised by the estimation pipeline.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum AsfError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("insufficient local data: {effective_n} observations with positive weight, {required} required")]
    InsufficientLocalData { effective_n: usize, required: usize },

    #[error("singular local design (smallest pivot ratio {pivot_ratio:.3e})")]
    SingularDesign { pivot_ratio: f64 },

    #[error("derivative requested from a degree-0 fit")]
    DegreeTooLow,

    #[error("quadrature did not converge: entry changed by {change:.3e} under node doubling")]
    QuadratureNonConvergence { change: f64 },

    #[error("maximum-likelihood fit did not converge after {iterations} iterations (|grad|_inf = {gradient:.3e})")]
    NonConvergence { iterations: usize, gradient: f64 },

    #[error("rank-deficient first-stage design")]
    RankDeficientDesign,

    #[error("no admissible bandwidth exponent: {0}")]
    InfeasibleWindow(String),

    #[error("trimming set is empty")]
    EmptyTrim,

    #[error("no observations at level x0 = {0}")]
    NoObservationsAtLevel(f64),

    #[error("{failed} of {total} local fits failed (indices {indices:?})")]
    LocalFitFailures {
        failed: usize,
        total: usize,
        indices: Vec<usize>,
    },

    #[error("singular second-moment matrix (condition number {condition:.3e})")]
    SingularSecondMoment { condition: f64 },

    #[error("zero denominator in conditional CDF at observations {0:?}")]
    ZeroDenominator(Vec<usize>),

    #[error("empty neighbourhood: kernel weights sum to zero (bandwidth too small)")]
    EmptyNeighborhood,

    #[error("grid mismatch between functional regressors")]
    GridMismatch,

    #[error("{failed} of {total} replications failed; first error: {first}")]
    ReplicationFailures {
        failed: usize,
        total: usize,
        first: String,
    },
}

pub type Result<T> = std::result::Result<T, AsfError>;
