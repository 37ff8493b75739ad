use thiserror::Error;

#[derive(Debug, Error)]
pub enum TensorError {
    #[error("{op}: shape mismatch between {lhs:?} and {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("{op}: {msg}")]
    Dimension { op: &'static str, msg: String },

    #[error("{op}: value {value} at index {index} is outside the domain")]
    Domain {
        op: &'static str,
        index: usize,
        value: f64,
    },

    #[error("{op}: degenerate input ({msg})")]
    Degenerate { op: &'static str, msg: String },

    #[error("backward needs a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("non-finite gradient in parameter {param} at index {index}")]
    NumericFault { param: usize, index: usize },

    #[error("optimizer state holds {expected} slots but {got} parameters were passed")]
    StateMismatch { expected: usize, got: usize },

    #[error("tensor format: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, TensorError>;
