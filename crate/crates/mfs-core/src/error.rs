use thiserror::Error;

#[derive(Debug, Error)]
pub enum CoreError {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("invalid HU window: lo {lo} > hi {hi}")]
    InvalidWindow { lo: f32, hi: f32 },

    #[error("modality mismatch: expected {expected}, got {got}")]
    ModalityMismatch { expected: String, got: String },

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("empty reference mask: {0}")]
    EmptyReference(String),

    #[error("surface undefined for empty mask: {0}")]
    UndefinedSurface(String),

    #[error("degenerate variance: all paired differences identical")]
    DegenerateVariance,

    #[error("series length mismatch or too short (need equal lengths >= 2)")]
    BadSeries,

    #[error("empty ROI")]
    EmptyRoi,

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("volume format error: {0}")]
    Format(String),

    #[error("sidecar json error: {0}")]
    Json(#[from] serde_json::Error),
}
