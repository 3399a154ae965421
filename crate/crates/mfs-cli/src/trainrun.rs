//! One training arm: build the model from a seed, run the optimizer,
//! persist the final checkpoint and loss trace.

use std::fs;
use std::path::Path;

use mfs_nn::checkpoint::{self, digest_hex};
use mfs_nn::loss::LossWeights;
use mfs_nn::model::{Model, ModelConfig};
use mfs_nn::params::ParamStore;
use mfs_nn::train::{trace_to_csv, train, TrainCase, TrainConfig, TrainResult};

use crate::error::CliError;

#[derive(Debug, Clone)]
pub struct ArmConfig {
    pub tag: String,
    pub model: ModelConfig,
    pub loss: LossWeights,
    pub train: TrainConfig,
}

/// Train an arm in `out_dir` (created if needed). Writes
/// `loss_trace.csv` and `checkpoint_final.ckpt`, returning the trained
/// model in memory.
pub fn run_training(
    arm: &ArmConfig,
    cases: &[TrainCase],
    out_dir: &Path,
) -> Result<(Model, ParamStore<f32>, TrainResult), CliError> {
    fs::create_dir_all(out_dir)?;
    let (model, params) = Model::build::<f32>(&arm.model, arm.train.seed)?;
    let result = train(&model, params, cases, &arm.loss, &arm.train, Some(out_dir))?;

    let csv = trace_to_csv(&result.trace);
    fs::write(out_dir.join("loss_trace.csv"), &csv)?;
    // The final checkpoint is rewritten with the digest of the complete
    // trace so header and file agree.
    checkpoint::save(
        &out_dir.join("checkpoint_final.ckpt"),
        &arm.model,
        &arm.train.clahe,
        &result.params,
        arm.train.seed,
        arm.train.epochs,
        &digest_hex(csv.as_bytes()),
    )?;
    Ok((model, result.params.clone(), result))
}
