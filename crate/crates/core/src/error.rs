use thiserror::Error;

/// Errors shared across the solver library.
#[derive(Error, Debug, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("materialization budget exceeded: {entries} entries > {budget}")]
    BudgetExceeded { entries: usize, budget: usize },

    #[error("positivity violated: {0}")]
    Positivity(String),

    #[error("rank too small for positivity: {0}")]
    RankTooSmall(String),

    #[error("hypothesis violated: {0}")]
    Hypothesis(String),
}

pub type Result<T> = std::result::Result<T, Error>;
