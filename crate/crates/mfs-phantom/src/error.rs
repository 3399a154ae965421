use thiserror::Error;

use mfs_core::CoreError;

#[derive(Debug, Error)]
pub enum PhantomError {
    #[error("infeasible phantom: {0}")]
    Infeasible(String),

    #[error("invalid phantom config: {0}")]
    InvalidConfig(String),

    #[error("invalid prescription: {0} Gy (must be > 0)")]
    InvalidPrescription(f64),

    #[error(transparent)]
    Core(#[from] CoreError),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}
