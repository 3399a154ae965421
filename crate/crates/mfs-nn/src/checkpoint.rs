//! Checkpoint files: a JSON header (model config echo, seed, epoch,
//! loss-trace digest, parameter manifest) followed by one binary blob of
//! f32 little-endian parameter data in manifest order.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::NnError;
use crate::model::{Model, ModelConfig};
use crate::params::ParamStore;
use crate::preprocess::ClaheConfig;

const MAGIC: &[u8; 8] = b"MFSCKPT1";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub model: ModelConfig,
    /// CT preprocessing used in training; inference must match it.
    #[serde(default)]
    pub clahe: ClaheConfig,
    pub seed: u64,
    pub epoch: usize,
    /// Hex SHA-256 of the loss trace CSV at save time.
    pub loss_trace_digest: String,
    pub params: Vec<ParamEntry>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

pub fn digest_hex(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(bytes);
    let out = h.finalize();
    out.iter().map(|b| format!("{b:02x}")).collect()
}

#[allow(clippy::too_many_arguments)]
pub fn save(
    path: &Path,
    model_config: &ModelConfig,
    clahe: &ClaheConfig,
    params: &ParamStore<f32>,
    seed: u64,
    epoch: usize,
    loss_trace_digest: &str,
) -> Result<(), NnError> {
    let header = CheckpointHeader {
        model: *model_config,
        clahe: *clahe,
        seed,
        epoch,
        loss_trace_digest: loss_trace_digest.to_string(),
        params: params
            .iter()
            .map(|(name, t)| ParamEntry {
                name: name.to_string(),
                shape: t.shape.clone(),
            })
            .collect(),
    };
    let header_json = serde_json::to_vec(&header)?;
    let mut bytes = Vec::new();
    bytes.extend_from_slice(MAGIC);
    bytes.extend_from_slice(&(header_json.len() as u64).to_le_bytes());
    bytes.extend_from_slice(&header_json);
    for (_, t) in params.iter() {
        for v in &t.data {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    fs::write(path, bytes)?;
    Ok(())
}

/// Load a checkpoint, rebuilding the model from the header's config and
/// verifying the parameter manifest matches the rebuilt network.
pub fn load(path: &Path) -> Result<(Model, ParamStore<f32>, CheckpointHeader), NnError> {
    let bytes = fs::read(path)?;
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(NnError::Checkpoint("bad magic".into()));
    }
    let hlen = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    if bytes.len() < 16 + hlen {
        return Err(NnError::Checkpoint("truncated header".into()));
    }
    let header: CheckpointHeader = serde_json::from_slice(&bytes[16..16 + hlen])?;
    let (model, mut params) = Model::build::<f32>(&header.model, header.seed)?;

    if params.len() != header.params.len() {
        return Err(NnError::Checkpoint(format!(
            "parameter count mismatch: model has {}, file lists {}",
            params.len(),
            header.params.len()
        )));
    }
    let mut off = 16 + hlen;
    for (idx, entry) in header.params.iter().enumerate() {
        if params.name(idx) != entry.name {
            return Err(NnError::Checkpoint(format!(
                "parameter order mismatch at {idx}: model {:?}, file {:?}",
                params.name(idx),
                entry.name
            )));
        }
        let n: usize = entry.shape.iter().product();
        let need = n * 4;
        if bytes.len() < off + need {
            return Err(NnError::Checkpoint("truncated payload".into()));
        }
        let dst = params.data_mut(idx);
        if dst.len() != n {
            return Err(NnError::Checkpoint(format!(
                "shape mismatch for {}",
                entry.name
            )));
        }
        for (i, chunk) in bytes[off..off + need].chunks_exact(4).enumerate() {
            dst[i] = f32::from_le_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]);
        }
        off += need;
    }
    if off != bytes.len() {
        return Err(NnError::Checkpoint("trailing bytes".into()));
    }
    Ok((model, params, header))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_preserves_parameters_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = ModelConfig::snet_ma(4);
        let (_, params) = Model::build::<f32>(&cfg, 9).unwrap();
        let p = dir.path().join("model.ckpt");
        save(&p, &cfg, &ClaheConfig::default(), &params, 9, 3, &digest_hex(b"trace")).unwrap();
        let (_, loaded, header) = load(&p).unwrap();
        assert_eq!(header.epoch, 3);
        assert_eq!(header.seed, 9);
        for id in 0..params.len() {
            let a = params.data(id);
            let b = loaded.data(id);
            assert_eq!(a.len(), b.len());
            for (x, y) in a.iter().zip(b) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
    }

    #[test]
    fn corrupted_magic_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.ckpt");
        fs::write(&p, b"NOTMAGIC0000000000").unwrap();
        assert!(matches!(load(&p), Err(NnError::Checkpoint(_))));
    }

    #[test]
    fn truncated_payload_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = ModelConfig::snet(4);
        let (_, params) = Model::build::<f32>(&cfg, 1).unwrap();
        let p = dir.path().join("model.ckpt");
        save(&p, &cfg, &ClaheConfig::default(), &params, 1, 0, "").unwrap();
        let bytes = fs::read(&p).unwrap();
        fs::write(&p, &bytes[..bytes.len() - 10]).unwrap();
        assert!(matches!(load(&p), Err(NnError::Checkpoint(_))));
    }
}
