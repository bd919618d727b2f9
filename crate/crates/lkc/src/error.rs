use thiserror::Error;

/// Errors produced by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("degenerate field: pooled variance is zero")]
    DegenerateField,
    #[error("format error at byte {offset}: {message}")]
    FormatError { offset: u64, message: String },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("levels must be strictly increasing")]
    NonMonotoneLevels,
    #[error("rho order {order} unsupported for this family (max {max})")]
    UnsupportedFamilyOrder { order: usize, max: usize },
    #[error("no crossing: expected EC stays below alpha on the search interval")]
    NoCrossing,
    #[error("insufficient fields: need at least {needed}, got {got}")]
    InsufficientFields { needed: usize, got: usize },
    #[error("insufficient levels: need at least {needed}, got {got}")]
    InsufficientLevels { needed: usize, got: usize },
    #[error("too few levels: need at least {needed}, got {got}")]
    TooFewLevels { needed: usize, got: usize },
    #[error("singular design: {0}")]
    SingularDesign(String),
    #[error("circulant embedding failed: negative spectrum after padding")]
    EmbeddingFailure,
    #[error("site count {0} exceeds the dense-Cholesky cap {1}")]
    TooLarge(usize, usize),
    #[error("nonlinear fit did not converge within {0} iterations")]
    NoConvergence(usize),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
