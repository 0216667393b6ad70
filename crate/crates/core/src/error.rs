use thiserror::Error;

/// Errors raised by the fitting, sampling and data routines.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("eta must be positive, got {0}")]
    NonPositiveEta(f64),

    #[error("eta must be non-integer, got {0}")]
    IntegerEta(f64),

    #[error("datapoints {0} and {1} coincide")]
    DuplicatePoints(usize, usize),

    #[error("singular linear system (reciprocal condition {rcond:e})")]
    SingularSystem { rcond: f64 },

    #[error("need at least {needed} datapoints, got {got}")]
    TooFewPoints { needed: usize, got: usize },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("probe coincides with datapoint {0}")]
    CoincidesWithDatapoint(usize),

    #[error("growth-rate constraint violated: |M a| = {0:e}")]
    ConstraintViolated(f64),

    #[error("data is reproduced exactly by a nullspace polynomial")]
    PolynomialData,

    #[error("log posterior undefined: {0}")]
    DomainError(String),

    #[error("fixed-point iteration did not converge after {iterations} steps (relative change {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("maximum posterior collapsed onto the nullspace pole (|h| = {norm:e})")]
    PoleCollapse { norm: f64 },

    #[error("matrix is not positive definite")]
    NotPositiveDefinite,

    #[error("{rejected} of {total} post-burn-in proposals diverged")]
    DivergentChains { rejected: usize, total: usize },

    #[error("need at least 2 draws, got {0}")]
    TooFewSamples(usize),

    #[error("operation requires the {expected} regime, posterior is {actual}")]
    WrongRegime { expected: &'static str, actual: &'static str },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("parse error at row {row}, column '{column}': cannot read '{value}' as a number")]
    Parse { row: usize, column: String, value: String },

    #[error("missing value at row {row}, column '{column}'")]
    MissingValue { row: usize, column: String },

    #[error("target column '{target}' not found; available columns: {available}")]
    MissingColumn { target: String, available: String },

    #[error("feature '{0}' is constant and cannot be scaled")]
    ConstantFeature(String),

    #[error("cannot split {n} rows into {k} folds")]
    KTooLarge { k: usize, n: usize },

    #[error("i/o error: {0}")]
    Io(String),
}

impl Error {
    /// Whether the failure is numerical rather than a problem with the inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::SingularSystem { .. }
                | Error::DuplicatePoints(..)
                | Error::NoConvergence { .. }
                | Error::PoleCollapse { .. }
                | Error::NotPositiveDefinite
                | Error::DivergentChains { .. }
                | Error::DomainError(_)
                | Error::PolynomialData
        )
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
