use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("data length {len} does not match shape {shape:?}")]
    DataLength { shape: Vec<usize>, len: usize },
    #[error("index {index} out of range for {op} (bound {bound})")]
    Index {
        op: &'static str,
        index: usize,
        bound: usize,
    },
    #[error("{op} expects a rank-{expected} tensor, got shape {shape:?}")]
    Rank {
        op: &'static str,
        expected: usize,
        shape: Vec<usize>,
    },
    #[error("backward requires a scalar output, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AdamError {
    #[error("training diverged: non-finite gradient for parameter `{0}`")]
    NonFiniteGradient(String),
    #[error("gradient for parameter `{name}` has shape {grad:?}, parameter has {param:?}")]
    Shape {
        name: String,
        param: Vec<usize>,
        grad: Vec<usize>,
    },
    #[error("expected {expected} gradients, got {got}")]
    Count { expected: usize, got: usize },
}
