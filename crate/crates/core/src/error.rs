use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid atom: {0}")]
    InvalidAtom(String),

    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("invalid domain: {0}")]
    InvalidDomain(String),

    #[error("unbalanced input: total masses {0} and {1} differ")]
    UnbalancedInput(f64, f64),

    #[error("negative weight {weight} at atom {index}")]
    NegativeWeight { index: usize, weight: f64 },

    #[error("measure has {0} atoms, brute-force oracle supports at most 3")]
    TooLarge(usize),

    #[error("dipole ({x:?}, {y:?}) violates the extremality window |x-y|^p < 2a-b")]
    ExtremalityViolation { x: Vec<f64>, y: Vec<f64> },

    #[error("point pair lies inside the diagonal tube (|x-y| = {0:e})")]
    DiagonalSingularity(f64),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("linear program failed: {0}")]
    Lp(#[from] crate::lp::LpError),

    #[error("invalid config: {0}")]
    ConfigInvalid(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
