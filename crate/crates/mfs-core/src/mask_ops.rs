//! HU-window thresholding and caudal extent clipping.

use crate::error::CoreError;
use crate::volume::{require_same_grid, BinaryMask, Modality, ScalarVolume};

/// Muscle HU window, inclusive on both bounds.
pub const MUSCLE_WINDOW: (f32, f32) = (-29.0, 150.0);
/// Bone HU window, inclusive on both bounds.
pub const BONE_WINDOW: (f32, f32) = (300.0, 1200.0);

/// Voxels with `lo <= value <= hi` (both bounds inclusive).
pub fn hu_window_mask(ct: &ScalarVolume, lo: f32, hi: f32) -> Result<BinaryMask, CoreError> {
    if ct.modality != Modality::Ct {
        return Err(CoreError::ModalityMismatch {
            expected: "CT".into(),
            got: ct.modality.as_str().into(),
        });
    }
    if lo > hi {
        return Err(CoreError::InvalidWindow { lo, hi });
    }
    let values = ct.values.iter().map(|&v| lo <= v && v <= hi).collect();
    BinaryMask::new(ct.grid, values)
}

/// Clear all label voxels on axial slices lying strictly more than
/// `margin_mm` caudal (larger z) to the most caudal PTV slice.
pub fn clip_caudal_extent(
    label: &BinaryMask,
    ptv: &BinaryMask,
    margin_mm: f64,
) -> Result<BinaryMask, CoreError> {
    require_same_grid(&label.grid, &ptv.grid, "clip_caudal_extent")?;
    let [nz, ny, nx] = label.grid.shape;
    let plane = ny * nx;
    let last_ptv_slice = (0..nz)
        .rev()
        .find(|&z| ptv.values[z * plane..(z + 1) * plane].iter().any(|&v| v))
        .ok_or_else(|| CoreError::EmptyReference("PTV mask is empty".into()))?;
    let limit_mm = label.grid.slice_z_mm(last_ptv_slice) + margin_mm;

    let mut out = label.clone();
    for z in 0..nz {
        if label.grid.slice_z_mm(z) > limit_mm {
            out.values[z * plane..(z + 1) * plane].fill(false);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::GridSpec;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn ct_with(grid: GridSpec, values: Vec<f32>) -> ScalarVolume {
        ScalarVolume::new(grid, Modality::Ct, values).unwrap()
    }

    #[test]
    fn muscle_window_includes_interior_and_boundary() {
        let grid = GridSpec::with_spacing([1, 1, 3], [1.0; 3]);
        let ct = ct_with(grid, vec![100.0, -29.0, 150.0]);
        let m = hu_window_mask(&ct, MUSCLE_WINDOW.0, MUSCLE_WINDOW.1).unwrap();
        assert!(m.values.iter().all(|&v| v));
    }

    #[test]
    fn window_is_inclusive_and_excludes_outside() {
        let grid = GridSpec::with_spacing([1, 1, 4], [1.0; 3]);
        let ct = ct_with(grid, vec![-30.0, -29.0, 150.0, 150.5]);
        let m = hu_window_mask(&ct, -29.0, 150.0).unwrap();
        assert_eq!(m.values, vec![false, true, true, false]);
    }

    #[test]
    fn reversed_window_is_an_error() {
        let grid = GridSpec::with_spacing([1, 1, 1], [1.0; 3]);
        let ct = ct_with(grid, vec![0.0]);
        assert!(matches!(
            hu_window_mask(&ct, 10.0, -10.0),
            Err(CoreError::InvalidWindow { .. })
        ));
    }

    #[test]
    fn non_ct_modality_is_rejected() {
        let grid = GridSpec::with_spacing([1, 1, 1], [1.0; 3]);
        let mri = ScalarVolume::filled(grid, Modality::Mri, 1.0).unwrap();
        assert!(matches!(
            hu_window_mask(&mri, 0.0, 1.0),
            Err(CoreError::ModalityMismatch { .. })
        ));
    }

    #[test]
    fn random_ct_bone_mask_matches_bruteforce_loop() {
        let grid = GridSpec::with_spacing([8, 8, 8], [1.0; 3]);
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        let values: Vec<f32> = (0..grid.voxel_count())
            .map(|_| rng.gen_range(-1000.0..1500.0))
            .collect();
        let ct = ct_with(grid, values.clone());
        let mask = hu_window_mask(&ct, BONE_WINDOW.0, BONE_WINDOW.1).unwrap();
        // Exhaustive voxelwise oracle.
        for (i, &v) in values.iter().enumerate() {
            let expect = (300.0..=1200.0).contains(&v);
            assert_eq!(mask.values[i], expect, "voxel {i} value {v}");
        }
    }

    #[test]
    fn disjoint_windows_give_disjoint_masks() {
        let grid = GridSpec::with_spacing([6, 6, 6], [1.0; 3]);
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let values: Vec<f32> = (0..grid.voxel_count())
            .map(|_| rng.gen_range(-1000.0..1500.0))
            .collect();
        let ct = ct_with(grid, values);
        let a = hu_window_mask(&ct, -29.0, 150.0).unwrap();
        let b = hu_window_mask(&ct, 300.0, 1200.0).unwrap();
        assert!(a.values.iter().zip(&b.values).all(|(&x, &y)| !(x && y)));
    }

    fn slab_mask(grid: GridSpec, z_range: std::ops::Range<usize>) -> BinaryMask {
        let mut m = BinaryMask::empty(grid).unwrap();
        for z in z_range {
            for y in 0..grid.shape[1] {
                for x in 0..grid.shape[2] {
                    m.set(z, y, x, true);
                }
            }
        }
        m
    }

    #[test]
    fn label_within_limit_is_unchanged() {
        let grid = GridSpec::with_spacing([16, 4, 4], [2.5, 1.0, 1.0]);
        let ptv = slab_mask(grid, 2..5);
        let label = slab_mask(grid, 4..8); // last label slice at z=7: (7-4)*2.5 = 7.5mm <= 10mm
        let out = clip_caudal_extent(&label, &ptv, 10.0).unwrap();
        assert_eq!(out, label);
    }

    #[test]
    fn slices_beyond_margin_are_cleared_per_slice_oracle() {
        let grid = GridSpec::with_spacing([16, 4, 4], [2.5, 1.0, 1.0]);
        let ptv = slab_mask(grid, 2..5); // last PTV slice z=4
        let label = slab_mask(grid, 4..12);
        let out = clip_caudal_extent(&label, &ptv, 10.0).unwrap();
        // Per-slice z-coordinate oracle: keep iff (z-4)*2.5 <= 10.
        for z in 0..16 {
            let expect = label.at(z, 0, 0) && (z as f64 - 4.0) * 2.5 <= 10.0;
            assert_eq!(out.at(z, 1, 1), expect, "slice {z}");
        }
        // Slices 9..12 are 12.5..17.5mm past: exactly those cleared.
        assert!(out.at(8, 0, 0));
        assert!(!out.at(9, 0, 0));
    }

    #[test]
    fn zero_margin_clips_right_after_last_ptv_slice() {
        let grid = GridSpec::with_spacing([8, 2, 2], [2.5, 1.0, 1.0]);
        let ptv = slab_mask(grid, 1..4); // last PTV slice z=3
        let label = slab_mask(grid, 0..8);
        let out = clip_caudal_extent(&label, &ptv, 0.0).unwrap();
        for z in 0..8 {
            assert_eq!(out.at(z, 0, 0), z <= 3, "slice {z}");
        }
    }

    #[test]
    fn empty_ptv_is_an_error() {
        let grid = GridSpec::with_spacing([4, 2, 2], [1.0; 3]);
        let ptv = BinaryMask::empty(grid).unwrap();
        let label = slab_mask(grid, 0..2);
        assert!(matches!(
            clip_caudal_extent(&label, &ptv, 5.0),
            Err(CoreError::EmptyReference(_))
        ));
    }

    #[test]
    fn clip_never_adds_voxels() {
        let grid = GridSpec::with_spacing([10, 3, 3], [2.0, 1.0, 1.0]);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut label = BinaryMask::empty(grid).unwrap();
        for v in label.values.iter_mut() {
            *v = rng.gen_bool(0.3);
        }
        let ptv = slab_mask(grid, 1..3);
        let out = clip_caudal_extent(&label, &ptv, 4.0).unwrap();
        for (o, l) in out.values.iter().zip(&label.values) {
            assert!(!o || *l);
        }
    }
}
