use thiserror::Error;

/// Errors surfaced by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("malformed family document: {0}")]
    Malformed(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("weights invalid: {0}")]
    WeightSum(String),
    #[error("non-finite entry at matrix {matrix}, row {row}, col {col}")]
    NonFiniteEntry { matrix: usize, row: usize, col: usize },
    #[error("degenerate spectrum: {0}")]
    DegenerateSpectrum(String),
    #[error("zero eigenvalue modulus at component {component} of matrix {matrix}: log undefined")]
    ZeroModulus { matrix: usize, component: usize },
    #[error("eigensolver failed to converge after {0} iterations")]
    EigenNonConvergence(usize),
    #[error("enumeration budget exceeded: {words} words > {budget}")]
    EnumerationBudget { words: u128, budget: u128 },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("covariance matrix invalid: {0}")]
    InvalidCovariance(String),
    #[error("regime mismatch: {0}")]
    RegimeMismatch(String),
    #[error("Monte Carlo budget too small: {0}")]
    BudgetTooSmall(String),
    #[error("perturbation regime change: {0}")]
    RegimeChange(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
