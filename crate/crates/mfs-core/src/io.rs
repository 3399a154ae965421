//! `RV1` volume files: a raw little-endian payload (`.rv`) plus a JSON
//! sidecar (`.rv.json`) carrying grid geometry and modality.
//!
//! Payload is f32 for scalar volumes and u8 {0,1} for masks, z-major.
//! Round-trips are bit-exact.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::CoreError;
use crate::grid::GridSpec;
use crate::volume::{BinaryMask, Modality, ScalarVolume};

pub const FORMAT_VERSION: &str = "RV1";

#[derive(Debug, Serialize, Deserialize)]
struct Sidecar {
    format_version: String,
    dtype: String,
    shape: [usize; 3],
    spacing_mm: [f64; 3],
    origin_mm: [f64; 3],
    modality: String,
}

/// Either kind of volume read back from disk.
#[derive(Debug, Clone, PartialEq)]
pub enum VolumeFile {
    Scalar(ScalarVolume),
    Mask(BinaryMask),
}

impl VolumeFile {
    pub fn into_scalar(self) -> Result<ScalarVolume, CoreError> {
        match self {
            VolumeFile::Scalar(v) => Ok(v),
            VolumeFile::Mask(_) => Err(CoreError::Format(
                "expected scalar volume, file holds a mask".into(),
            )),
        }
    }

    pub fn into_mask(self) -> Result<BinaryMask, CoreError> {
        match self {
            VolumeFile::Mask(m) => Ok(m),
            VolumeFile::Scalar(_) => Err(CoreError::Format(
                "expected mask, file holds a scalar volume".into(),
            )),
        }
    }
}

fn sidecar_path(path: &Path) -> PathBuf {
    let mut os = path.as_os_str().to_owned();
    os.push(".json");
    PathBuf::from(os)
}

pub fn write_scalar(vol: &ScalarVolume, path: &Path) -> Result<(), CoreError> {
    let sc = Sidecar {
        format_version: FORMAT_VERSION.into(),
        dtype: "f32".into(),
        shape: vol.grid.shape,
        spacing_mm: vol.grid.spacing_mm,
        origin_mm: vol.grid.origin_mm,
        modality: vol.modality.as_str().into(),
    };
    let mut payload = Vec::with_capacity(vol.values.len() * 4);
    for v in &vol.values {
        payload.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, payload)?;
    fs::write(sidecar_path(path), serde_json::to_vec_pretty(&sc)?)?;
    Ok(())
}

pub fn write_mask(mask: &BinaryMask, path: &Path) -> Result<(), CoreError> {
    let sc = Sidecar {
        format_version: FORMAT_VERSION.into(),
        dtype: "u8".into(),
        shape: mask.grid.shape,
        spacing_mm: mask.grid.spacing_mm,
        origin_mm: mask.grid.origin_mm,
        modality: "MASK".into(),
    };
    let payload: Vec<u8> = mask.values.iter().map(|&b| b as u8).collect();
    fs::write(path, payload)?;
    fs::write(sidecar_path(path), serde_json::to_vec_pretty(&sc)?)?;
    Ok(())
}

/// Read an `RV1` volume; the sidecar decides whether it is a scalar
/// volume or a mask.
pub fn read_volume(path: &Path) -> Result<VolumeFile, CoreError> {
    let sc_path = sidecar_path(path);
    let sc_bytes = fs::read(&sc_path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            CoreError::Format(format!("missing sidecar {}", sc_path.display()))
        } else {
            CoreError::Io(e)
        }
    })?;
    let sc: Sidecar = serde_json::from_slice(&sc_bytes)?;
    if sc.format_version != FORMAT_VERSION {
        return Err(CoreError::Format(format!(
            "unsupported format_version {:?}",
            sc.format_version
        )));
    }
    let grid = GridSpec::new(sc.shape, sc.spacing_mm, sc.origin_mm);
    grid.validate()?;
    let n = grid.voxel_count();
    let payload = fs::read(path)?;

    match sc.dtype.as_str() {
        "f32" => {
            if payload.len() != n * 4 {
                return Err(CoreError::Format(format!(
                    "payload size {} != {} voxels * 4 bytes",
                    payload.len(),
                    n
                )));
            }
            let modality = match sc.modality.as_str() {
                "CT" => Modality::Ct,
                "MRI" => Modality::Mri,
                "DOSE" => Modality::Dose,
                other => {
                    return Err(CoreError::Format(format!(
                        "unknown modality {other:?} for f32 volume"
                    )))
                }
            };
            let values: Vec<f32> = payload
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
                .collect();
            Ok(VolumeFile::Scalar(ScalarVolume::new(grid, modality, values)?))
        }
        "u8" => {
            if payload.len() != n {
                return Err(CoreError::Format(format!(
                    "payload size {} != {} voxels",
                    payload.len(),
                    n
                )));
            }
            let values: Vec<bool> = payload.iter().map(|&b| b != 0).collect();
            Ok(VolumeFile::Mask(BinaryMask::new(grid, values)?))
        }
        other => Err(CoreError::Format(format!("unknown dtype {other:?}"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn tmpdir() -> tempfile::TempDir {
        tempfile::tempdir().unwrap()
    }

    #[test]
    fn scalar_round_trip_is_bit_exact() {
        let dir = tmpdir();
        let grid = GridSpec::new([3, 4, 5], [2.5, 1.17, 1.17], [1.0, -2.0, 3.5]);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let values: Vec<f32> = (0..grid.voxel_count())
            .map(|_| rng.gen_range(-1000.0..1500.0))
            .collect();
        let vol = ScalarVolume::new(grid, Modality::Ct, values).unwrap();
        let p = dir.path().join("ct.rv");
        write_scalar(&vol, &p).unwrap();
        let back = read_volume(&p).unwrap().into_scalar().unwrap();
        assert_eq!(back.grid, vol.grid);
        assert_eq!(back.modality, vol.modality);
        for (a, b) in back.values.iter().zip(&vol.values) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn sidecar_spacing_reads_back_exactly() {
        let dir = tmpdir();
        let grid = GridSpec::new([2, 2, 2], [2.5, 1.17, 1.17], [0.0; 3]);
        let vol = ScalarVolume::filled(grid, Modality::Ct, 0.0).unwrap();
        let p = dir.path().join("v.rv");
        write_scalar(&vol, &p).unwrap();
        let back = read_volume(&p).unwrap().into_scalar().unwrap();
        assert_eq!(back.grid.spacing_mm, [2.5, 1.17, 1.17]);
    }

    #[test]
    fn mask_round_trip() {
        let dir = tmpdir();
        let grid = GridSpec::with_spacing([4, 4, 4], [1.0, 1.0, 1.0]);
        let mut mask = BinaryMask::empty(grid).unwrap();
        mask.set(1, 2, 3, true);
        mask.set(0, 0, 0, true);
        let p = dir.path().join("m.rv");
        write_mask(&mask, &p).unwrap();
        let back = read_volume(&p).unwrap().into_mask().unwrap();
        assert_eq!(back, mask);
    }

    #[test]
    fn short_payload_is_a_size_mismatch_error() {
        let dir = tmpdir();
        let grid = GridSpec::with_spacing([4, 4, 4], [1.0; 3]);
        let vol = ScalarVolume::filled(grid, Modality::Mri, 1.0).unwrap();
        let p = dir.path().join("v.rv");
        write_scalar(&vol, &p).unwrap();
        // Truncate the payload behind the sidecar's back.
        let bytes = fs::read(&p).unwrap();
        fs::write(&p, &bytes[..bytes.len() - 4]).unwrap();
        match read_volume(&p) {
            Err(CoreError::Format(msg)) => assert!(msg.contains("payload size")),
            other => panic!("expected size mismatch, got {other:?}"),
        }
    }

    #[test]
    fn missing_sidecar_is_reported() {
        let dir = tmpdir();
        let p = dir.path().join("v.rv");
        fs::write(&p, [0u8; 16]).unwrap();
        match read_volume(&p) {
            Err(CoreError::Format(msg)) => assert!(msg.contains("missing sidecar")),
            other => panic!("expected missing sidecar, got {other:?}"),
        }
    }

    #[test]
    fn unknown_dtype_is_rejected() {
        let dir = tmpdir();
        let grid = GridSpec::with_spacing([2, 2, 2], [1.0; 3]);
        let vol = ScalarVolume::filled(grid, Modality::Ct, 0.0).unwrap();
        let p = dir.path().join("v.rv");
        write_scalar(&vol, &p).unwrap();
        let sc = fs::read_to_string(sidecar_path(&p)).unwrap();
        fs::write(sidecar_path(&p), sc.replace("\"f32\"", "\"f16\"")).unwrap();
        match read_volume(&p) {
            Err(CoreError::Format(msg)) => assert!(msg.contains("unknown dtype")),
            other => panic!("expected unknown dtype, got {other:?}"),
        }
    }
}
