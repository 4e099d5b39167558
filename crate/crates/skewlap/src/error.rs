use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("matrix is not positive definite: pivot {index} = {pivot:.6e}")]
    NotPositiveDefinite { index: usize, pivot: f64 },

    #[error("representation not supported by this model: {0}")]
    UnsupportedRepresentation(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("point outside the model domain")]
    DomainViolation,

    #[error("dense tensor refused: d = {dim} exceeds cap {cap}")]
    TooLarge { dim: usize, cap: usize },

    #[error("{count} of {total} observable values were not finite")]
    NonFinite { count: usize, total: usize },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Whether the error stems from bad input rather than a numerical breakdown.
    pub fn is_argument_error(&self) -> bool {
        matches!(
            self,
            Error::InvalidArgument(_)
                | Error::Unsupported(_)
                | Error::UnsupportedRepresentation(_)
                | Error::TooLarge { .. }
                | Error::DomainViolation
                | Error::Io(_)
                | Error::Csv(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
