//! Experiment configuration file: one JSON document mirroring the model,
//! loss, and training configs plus dataset/output locations and the seed
//! list.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use mfs_nn::loss::LossWeights;
use mfs_nn::model::ModelConfig;
use mfs_nn::train::TrainConfig;

use crate::error::CliError;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub name: String,
    pub model: ModelConfig,
    pub loss: LossWeights,
    pub train: TrainConfig,
    /// Dataset root (the directory holding `manifest.json`).
    pub manifest: PathBuf,
    pub out_dir: PathBuf,
    pub seeds: Vec<u64>,
}

impl ExperimentSpec {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let bytes = fs::read(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        let spec: ExperimentSpec = serde_json::from_slice(&bytes)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if self.seeds.is_empty() {
            return Err(CliError::Config("seeds list must be nonempty".into()));
        }
        self.model.validate().map_err(CliError::from)?;
        self.loss.validate().map_err(CliError::from)?;
        self.train.validate().map_err(CliError::from)?;
        Ok(())
    }
}
