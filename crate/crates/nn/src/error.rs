use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NnError {
    #[error("shape mismatch in {op}: expected {expected:?}, got {actual:?}")]
    ShapeMismatch {
        op: &'static str,
        expected: Vec<usize>,
        actual: Vec<usize>,
    },
    #[error("invalid layer spec: {0}")]
    InvalidSpec(String),
    #[error("batch normalization needs at least 2 samples in training mode, got {0}")]
    BatchTooSmall(usize),
    #[error("backward called before forward in {0}")]
    NoForwardCache(&'static str),
}

pub type Result<T> = std::result::Result<T, NnError>;
