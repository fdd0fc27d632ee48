use thiserror::Error;

use kgprompt_tensor::TensorError;

#[derive(Debug, Error)]
pub enum CoreError {
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("graph contains no triples")]
    EmptyGraph,
    #[error("unknown entity `{0}`")]
    UnknownEntity(String),
    #[error("unknown relation `{0}`")]
    UnknownRelation(String),
    #[error("validation failed: {0}")]
    Validation(String),
    #[error("embedding error: {0}")]
    Embedding(String),
    #[error("embedding service failed after {attempts} attempts: {reason}")]
    EmbeddingService { attempts: usize, reason: String },
    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("no label constructible: {0}")]
    Unlabelable(String),
    #[error("training aborted: {0}")]
    Training(String),
    #[error("answer backend failed after {attempts} attempts: {reason}")]
    Backend { attempts: usize, reason: String },
    #[error("could not parse backend decision: {0}")]
    DecisionParse(String),
    #[error("synthetic benchmark infeasible: {0}")]
    Infeasible(String),
    #[error("selection failed: {0}")]
    Selection(String),
    #[error("missing checkpoint(s): {0}")]
    MissingCheckpoint(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = CoreError> = std::result::Result<T, E>;
