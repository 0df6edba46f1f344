use thiserror::Error;

/// Errors raised by the estimator, its solvers and the bounds calculator.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: expected {expected}, got {actual} ({what})")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("column {0} is identically zero and cannot be normalized")]
    DegenerateColumn(usize),

    #[error("{subsets} h-subsets exceed the enumeration cap of {cap}; use the C-step solver instead")]
    TooLarge { subsets: f64, cap: u64 },

    #[error("subproblem did not converge ({context}): {iterations} sweeps, KKT residual {kkt:.3e}")]
    NonConvergence {
        context: String,
        iterations: usize,
        kkt: f64,
    },

    #[error("bound is undefined: {0}")]
    UndefinedBound(String),

    #[error("matrix is rank deficient: rank {rank} < {required}")]
    RankDeficient { rank: usize, required: usize },
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
