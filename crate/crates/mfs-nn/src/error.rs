use thiserror::Error;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("channel mismatch: expected {expected}, got {got}")]
    ChannelMismatch { expected: usize, got: usize },

    #[error("invalid model config: {0}")]
    InvalidConfig(String),

    #[error("missing modality: {0}")]
    MissingModality(String),

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("spatial dims must be divisible by 4 for two pooling stages, got {0:?}")]
    BadDims([usize; 3]),

    #[error("invalid threshold {0}; must lie in (0,1)")]
    BadThreshold(f64),

    #[error("prediction outside [0,1]: value {0} at index {1}")]
    PredOutOfRange(f64, usize),

    #[error("non-finite loss: {0}")]
    NonFinite(String),

    #[error("checkpoint format error: {0}")]
    Checkpoint(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}
