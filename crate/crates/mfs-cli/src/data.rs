//! Dataset access for experiments: training cases use the noisy labels,
//! evaluation cases carry the clean label and the dose grid.

use std::path::{Path, PathBuf};

use mfs_core::volume::{BinaryMask, ScalarVolume};
use mfs_nn::train::TrainCase;
use mfs_phantom::io::{load_manifest, read_case};
use mfs_phantom::{Manifest, Split};

use crate::error::CliError;

pub struct Dataset {
    pub root: PathBuf,
    pub manifest: Manifest,
}

/// One held-out case for evaluation.
#[derive(Debug, Clone)]
pub struct EvalCase {
    pub id: String,
    pub ct: ScalarVolume,
    pub mri: ScalarVolume,
    pub label_clean: BinaryMask,
    pub dose: ScalarVolume,
}

impl Dataset {
    pub fn load(root: &Path) -> Result<Self, CliError> {
        let manifest = load_manifest(root)
            .map_err(|e| CliError::Config(format!("cannot load manifest under {}: {e}", root.display())))?;
        Ok(Self {
            root: root.to_path_buf(),
            manifest,
        })
    }

    /// Training cases (noisy labels) in manifest order.
    pub fn train_cases(&self) -> Result<Vec<TrainCase>, CliError> {
        self.manifest
            .cases
            .iter()
            .filter(|e| e.split == Split::Train)
            .map(|e| {
                let (case, _) = read_case(&self.root.join(&e.id))?;
                Ok(TrainCase {
                    id: case.id,
                    ct: case.ct,
                    mri: case.mri,
                    label: case.label_noisy,
                })
            })
            .collect()
    }

    /// Held-out cases (clean labels + dose) in manifest order.
    pub fn eval_cases(&self, split: Split) -> Result<Vec<EvalCase>, CliError> {
        self.manifest
            .cases
            .iter()
            .filter(|e| e.split == split)
            .map(|e| {
                let (case, _) = read_case(&self.root.join(&e.id))?;
                Ok(EvalCase {
                    id: case.id,
                    ct: case.ct,
                    mri: case.mri,
                    label_clean: case.label_clean,
                    dose: case.dose,
                })
            })
            .collect()
    }
}
