use thiserror::Error;

/// Command errors, classified by exit code: config problems exit 2,
/// runtime/data problems exit 3.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),

    #[error("runtime error: {0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Runtime(_) => 3,
        }
    }
}

impl From<mfs_nn::NnError> for CliError {
    fn from(e: mfs_nn::NnError) -> Self {
        use mfs_nn::NnError::*;
        match e {
            InvalidConfig(_) | MissingModality(_) | BadThreshold(_) => {
                CliError::Config(e.to_string())
            }
            _ => CliError::Runtime(e.to_string()),
        }
    }
}

impl From<mfs_phantom::PhantomError> for CliError {
    fn from(e: mfs_phantom::PhantomError) -> Self {
        use mfs_phantom::PhantomError::*;
        match e {
            InvalidConfig(_) | Infeasible(_) | InvalidPrescription(_) => {
                CliError::Config(e.to_string())
            }
            _ => CliError::Runtime(e.to_string()),
        }
    }
}

impl From<mfs_core::CoreError> for CliError {
    fn from(e: mfs_core::CoreError) -> Self {
        CliError::Runtime(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Config(e.to_string())
    }
}
