use thiserror::Error;

pub type Result<T> = std::result::Result<T, TensorError>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TensorError {
    #[error("shape {shape:?} holds {expected} elements but {found} values were supplied")]
    DataLength {
        shape: Vec<usize>,
        expected: usize,
        found: usize,
    },
    #[error("{op}: zero-sized extent in shape {shape:?}")]
    EmptyExtent { op: &'static str, shape: Vec<usize> },
    #[error("{op}: expected rank {expected}, got shape {found:?}")]
    Rank {
        op: &'static str,
        expected: &'static str,
        found: Vec<usize>,
    },
    /// A single axis is out of range for the requested operation.
    #[error("{op}: axis {axis} is incompatible ({detail})")]
    Dimension {
        op: &'static str,
        axis: &'static str,
        detail: String,
    },
    #[error("{op}: shape mismatch, {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{op} produced a non-finite value")]
    NonFinite { op: &'static str },
    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("backward was already run on this graph")]
    BackwardAlreadyRun,
    #[error("non-finite gradient for parameter `{param}` at element {index}")]
    NonFiniteGradient { param: String, index: usize },
    #[error("optimizer state does not match parameter `{param}`")]
    OptimizerMismatch { param: String },
}
