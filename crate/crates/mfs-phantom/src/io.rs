//! On-disk layout: one directory per case holding `RV1` volumes
//! (`ct.rv`, `mri.rv`, `dose.rv`, `label_clean.rv`, `label_noisy.rv`,
//! `ptv.rv`) plus `case.json`; the dataset root holds `manifest.json`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use mfs_core::io::{read_volume, write_mask, write_scalar};

use crate::config::PhantomConfig;
use crate::dataset::Manifest;
use crate::error::PhantomError;
use crate::generate::Case;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseMeta {
    pub id: String,
    pub true_offset_mm: [f64; 3],
    pub seed: u64,
    pub config: PhantomConfig,
}

pub fn write_case(case: &Case, config: &PhantomConfig, dir: &Path) -> Result<(), PhantomError> {
    fs::create_dir_all(dir)?;
    write_scalar(&case.ct, &dir.join("ct.rv"))?;
    write_scalar(&case.mri, &dir.join("mri.rv"))?;
    write_scalar(&case.dose, &dir.join("dose.rv"))?;
    write_mask(&case.label_clean, &dir.join("label_clean.rv"))?;
    write_mask(&case.label_noisy, &dir.join("label_noisy.rv"))?;
    write_mask(&case.ptv, &dir.join("ptv.rv"))?;
    let meta = CaseMeta {
        id: case.id.clone(),
        true_offset_mm: case.true_offset_mm,
        seed: config.seed,
        config: *config,
    };
    fs::write(
        dir.join("case.json"),
        serde_json::to_vec_pretty(&meta)?,
    )?;
    Ok(())
}

pub fn read_case(dir: &Path) -> Result<(Case, CaseMeta), PhantomError> {
    let meta: CaseMeta = serde_json::from_slice(&fs::read(dir.join("case.json"))?)?;
    let case = Case {
        id: meta.id.clone(),
        ct: read_volume(&dir.join("ct.rv"))?.into_scalar()?,
        mri: read_volume(&dir.join("mri.rv"))?.into_scalar()?,
        dose: read_volume(&dir.join("dose.rv"))?.into_scalar()?,
        label_clean: read_volume(&dir.join("label_clean.rv"))?.into_mask()?,
        label_noisy: read_volume(&dir.join("label_noisy.rv"))?.into_mask()?,
        ptv: read_volume(&dir.join("ptv.rv"))?.into_mask()?,
        true_offset_mm: meta.true_offset_mm,
    };
    Ok((case, meta))
}

/// Write cases and the manifest under `root` (one subdirectory per id).
pub fn write_dataset(
    root: &Path,
    cases: &[Case],
    base_config: &PhantomConfig,
    manifest: &Manifest,
) -> Result<(), PhantomError> {
    fs::create_dir_all(root)?;
    for (case, entry) in cases.iter().zip(&manifest.cases) {
        let mut cfg = *base_config;
        cfg.seed = entry.seed;
        write_case(case, &cfg, &root.join(&case.id))?;
    }
    fs::write(
        root.join("manifest.json"),
        serde_json::to_vec_pretty(manifest)?,
    )?;
    Ok(())
}

pub fn load_manifest(root: &Path) -> Result<Manifest, PhantomError> {
    Ok(serde_json::from_slice(&fs::read(
        root.join("manifest.json"),
    )?)?)
}
