use thiserror::Error;

/// Errors raised by the estimation and simulation routines.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum SoblError {
    #[error("class {class} has {count} observation(s); at least {required} are needed")]
    DegenerateClass {
        class: usize,
        count: usize,
        required: usize,
    },

    #[error("invalid label {label}: labels must be integers in 1..={k}")]
    InvalidLabel { label: usize, k: usize },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite value in input at row {row}, column {col}")]
    NonFinite { row: usize, col: usize },

    #[error("between-class scatter has rank {attained}, {required} directions requested")]
    RankDeficient { attained: usize, required: usize },

    #[error("correlation undefined: {0}")]
    UndefinedCorrelation(String),

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("diagonal entry {index} of the covariance is {value}; add a ridge")]
    NonPositiveDiagonal { index: usize, value: f64 },

    #[error("matrix is not positive definite: {0}")]
    NotPositiveDefinite(String),

    #[error("matrix is singular: {0}")]
    Singular(String),

    #[error("basis is identically zero")]
    EmptyBasis,

    #[error("stratification failed: {0}")]
    Stratification(String),
}

impl SoblError {
    /// True for failures caused by the numerical content of otherwise well-formed input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            SoblError::RankDeficient { .. }
                | SoblError::UndefinedCorrelation(_)
                | SoblError::DegenerateInput(_)
                | SoblError::NonPositiveDiagonal { .. }
                | SoblError::NotPositiveDefinite(_)
                | SoblError::Singular(_)
                | SoblError::EmptyBasis
        )
    }
}

pub type Result<T> = std::result::Result<T, SoblError>;
