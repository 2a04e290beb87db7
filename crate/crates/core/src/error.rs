use fcdlif_tensor::TensorError;
use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("image spatial shape {found:?} does not match the model input {expected:?}")]
    SpatialShape { expected: [usize; 3], found: [usize; 3] },
    #[error("fixed-length model accepts exactly {expected} frames, got {found}")]
    FixedLength { expected: usize, found: usize },
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error("singular kinetic model: {0}")]
    Singular(String),
    #[error("calibration failed: {0}")]
    Calibration(String),
    #[error("non-finite loss at epoch {epoch}, sample {sample}")]
    NonFiniteLoss { epoch: usize, sample: usize },
    #[error("malformed file: {0}")]
    Format(String),
    #[error("unsupported format version {found} (expected {expected})")]
    Version { expected: u32, found: u32 },
    #[error("checksum mismatch: file is corrupted")]
    Checksum,
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
