use thiserror::Error;

#[derive(Debug, Error)]
pub enum TensorError {
    #[error("dimension mismatch in {op}: {left:?} vs {right:?}")]
    Dimension {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },
    #[error("numeric fault in {op}: non-finite value produced")]
    NumericFault { op: &'static str },
    #[error("invalid argument: {0}")]
    Invalid(String),
    #[error("unknown parameter slot `{0}`")]
    MissingSlot(String),
    #[error("checkpoint slot `{name}` has shape {found:?}, expected {expected:?}")]
    CheckpointShape {
        name: String,
        expected: (usize, usize),
        found: (usize, usize),
    },
    #[error("unsupported checkpoint format version {0}")]
    CheckpointVersion(u32),
    #[error("gradient check contract violated: {0}")]
    Contract(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),
}
