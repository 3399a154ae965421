//! Resampling of volumes and masks onto a different grid.
//!
//! Sampling happens at target voxel centers mapped into the source's
//! continuous index space. Points outside the source extent (the box
//! spanned by voxel centers) take a per-modality fill value: CT gets
//! -1000 HU (air), MRI and dose get 0.

use crate::error::CoreError;
use crate::grid::GridSpec;
use crate::par::for_each_chunk_mut;
use crate::volume::{BinaryMask, Modality, ScalarVolume};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Interp {
    Trilinear,
    Nearest,
}

pub fn fill_value(modality: Modality) -> f32 {
    match modality {
        Modality::Ct => -1000.0,
        Modality::Mri => 0.0,
        Modality::Dose => 0.0,
    }
}

#[inline]
fn sample_trilinear(values: &[f32], shape: [usize; 3], ci: [f64; 3], fill: f32) -> f32 {
    let [nz, ny, nx] = shape;
    let (cz, cy, cx) = (ci[0], ci[1], ci[2]);
    if cz < 0.0
        || cy < 0.0
        || cx < 0.0
        || cz > (nz - 1) as f64
        || cy > (ny - 1) as f64
        || cx > (nx - 1) as f64
    {
        return fill;
    }
    let z0 = (cz.floor() as usize).min(nz - 1);
    let y0 = (cy.floor() as usize).min(ny - 1);
    let x0 = (cx.floor() as usize).min(nx - 1);
    let z1 = (z0 + 1).min(nz - 1);
    let y1 = (y0 + 1).min(ny - 1);
    let x1 = (x0 + 1).min(nx - 1);
    let fz = cz - z0 as f64;
    let fy = cy - y0 as f64;
    let fx = cx - x0 as f64;

    let at = |z: usize, y: usize, x: usize| values[(z * ny + y) * nx + x] as f64;
    let c00 = at(z0, y0, x0) * (1.0 - fx) + at(z0, y0, x1) * fx;
    let c01 = at(z0, y1, x0) * (1.0 - fx) + at(z0, y1, x1) * fx;
    let c10 = at(z1, y0, x0) * (1.0 - fx) + at(z1, y0, x1) * fx;
    let c11 = at(z1, y1, x0) * (1.0 - fx) + at(z1, y1, x1) * fx;
    let c0 = c00 * (1.0 - fy) + c01 * fy;
    let c1 = c10 * (1.0 - fy) + c11 * fy;
    (c0 * (1.0 - fz) + c1 * fz) as f32
}

#[inline]
fn sample_nearest(values: &[f32], shape: [usize; 3], ci: [f64; 3], fill: f32) -> f32 {
    let [nz, ny, nx] = shape;
    let z = ci[0].round();
    let y = ci[1].round();
    let x = ci[2].round();
    if z < 0.0 || y < 0.0 || x < 0.0 || z > (nz - 1) as f64 || y > (ny - 1) as f64 || x > (nx - 1) as f64
    {
        return fill;
    }
    values[((z as usize) * ny + y as usize) * nx + x as usize]
}

/// Resample a scalar volume onto `target`.
pub fn resample(
    vol: &ScalarVolume,
    target: &GridSpec,
    interp: Interp,
) -> Result<ScalarVolume, CoreError> {
    vol.grid.validate()?;
    target.validate()?;
    if *target == vol.grid {
        return Ok(ScalarVolume {
            grid: *target,
            modality: vol.modality,
            values: vol.values.clone(),
        });
    }
    let fill = fill_value(vol.modality);
    let [_, ny, nx] = target.shape;
    let plane = ny * nx;
    let mut out = vec![0.0f32; target.voxel_count()];
    let src = &vol.values;
    let sgrid = vol.grid;
    for_each_chunk_mut(&mut out, plane, |z, slab| {
        for y in 0..ny {
            for x in 0..nx {
                let p = target.voxel_center_mm(z, y, x);
                let ci = sgrid.continuous_index(p);
                slab[y * nx + x] = match interp {
                    Interp::Trilinear => sample_trilinear(src, sgrid.shape, ci, fill),
                    Interp::Nearest => sample_nearest(src, sgrid.shape, ci, fill),
                };
            }
        }
    });
    ScalarVolume::new(*target, vol.modality, out)
}

/// Resample a mask onto `target` with nearest-neighbor lookup; outside
/// the source extent the mask is false.
pub fn resample_mask(mask: &BinaryMask, target: &GridSpec) -> Result<BinaryMask, CoreError> {
    mask.grid.validate()?;
    target.validate()?;
    if *target == mask.grid {
        return Ok(mask.clone());
    }
    let [_, ny, nx] = target.shape;
    let plane = ny * nx;
    let mut out = vec![false; target.voxel_count()];
    let sgrid = mask.grid;
    let [snz, sny, snx] = sgrid.shape;
    let src = &mask.values;
    for_each_chunk_mut(&mut out, plane, |z, slab| {
        for y in 0..ny {
            for x in 0..nx {
                let p = target.voxel_center_mm(z, y, x);
                let ci = sgrid.continuous_index(p);
                let (cz, cy, cx) = (ci[0].round(), ci[1].round(), ci[2].round());
                slab[y * nx + x] = cz >= 0.0
                    && cy >= 0.0
                    && cx >= 0.0
                    && cz <= (snz - 1) as f64
                    && cy <= (sny - 1) as f64
                    && cx <= (snx - 1) as f64
                    && src[((cz as usize) * sny + cy as usize) * snx + cx as usize];
            }
        }
    });
    BinaryMask::new(*target, out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_grid_is_identity() {
        let grid = GridSpec::new([4, 5, 6], [2.0, 1.0, 1.5], [1.0, 2.0, 3.0]);
        let values: Vec<f32> = (0..grid.voxel_count()).map(|i| i as f32 * 0.37).collect();
        let vol = ScalarVolume::new(grid, Modality::Ct, values).unwrap();
        let out = resample(&vol, &grid, Interp::Trilinear).unwrap();
        assert_eq!(out.values, vol.values);
    }

    #[test]
    fn constant_volume_resamples_to_constant_inside_extent() {
        let grid = GridSpec::with_spacing([8, 8, 8], [2.0, 2.0, 2.0]);
        let vol = ScalarVolume::filled(grid, Modality::Mri, 7.25).unwrap();
        // Finer grid fully inside the source extent.
        let target = GridSpec::new([10, 10, 10], [1.0, 1.0, 1.0], [1.0, 1.0, 1.0]);
        let out = resample(&vol, &target, Interp::Trilinear).unwrap();
        for v in &out.values {
            assert_eq!(*v, 7.25);
        }
    }

    /// Independent pointwise trilinear oracle for a 1D ramp.
    fn ramp_oracle_1d(xs: &[f64], x: f64) -> f64 {
        // f(x) = x sampled on integer knots; linear interp between.
        let n = xs.len();
        if x < 0.0 || x > (n - 1) as f64 {
            return 0.0;
        }
        let i0 = x.floor() as usize;
        let i1 = (i0 + 1).min(n - 1);
        let f = x - i0 as f64;
        xs[i0] * (1.0 - f) + xs[i1] * f
    }

    #[test]
    fn linear_ramp_half_spacing_matches_pointwise_oracle() {
        // 1D-degenerate grid along x: shape (1,1,16), f(x) = x.
        let grid = GridSpec::with_spacing([1, 1, 16], [1.0, 1.0, 1.0]);
        let values: Vec<f32> = (0..16).map(|i| i as f32).collect();
        let vol = ScalarVolume::new(grid, Modality::Mri, values.clone()).unwrap();
        let target = GridSpec::new([1, 1, 31], [1.0, 1.0, 0.5], [0.0, 0.0, 0.0]);
        let out = resample(&vol, &target, Interp::Trilinear).unwrap();
        let xs: Vec<f64> = values.iter().map(|&v| v as f64).collect();
        for (i, v) in out.values.iter().enumerate() {
            let expect = ramp_oracle_1d(&xs, i as f64 * 0.5);
            assert!(
                (*v as f64 - expect).abs() < 1e-6,
                "sample {i}: {v} vs {expect}"
            );
        }
    }

    #[test]
    fn out_of_extent_uses_modality_fill() {
        let grid = GridSpec::with_spacing([4, 4, 4], [1.0; 3]);
        let ct = ScalarVolume::filled(grid, Modality::Ct, 100.0).unwrap();
        let target = GridSpec::new([4, 4, 4], [1.0; 3], [-10.0, 0.0, 0.0]);
        let out = resample(&ct, &target, Interp::Trilinear).unwrap();
        assert_eq!(out.values[0], -1000.0);
        let mri = ScalarVolume::filled(grid, Modality::Mri, 100.0).unwrap();
        let out = resample(&mri, &target, Interp::Trilinear).unwrap();
        assert_eq!(out.values[0], 0.0);
    }

    #[test]
    fn invalid_spacing_is_rejected() {
        let grid = GridSpec::with_spacing([4, 4, 4], [1.0; 3]);
        let vol = ScalarVolume::filled(grid, Modality::Ct, 0.0).unwrap();
        let bad = GridSpec::with_spacing([4, 4, 4], [1.0, 0.0, 1.0]);
        assert!(matches!(
            resample(&vol, &bad, Interp::Trilinear),
            Err(CoreError::InvalidGrid(_))
        ));
    }

    #[test]
    fn mask_resample_nearest_round_trips_on_same_grid() {
        let grid = GridSpec::with_spacing([4, 4, 4], [1.0; 3]);
        let mut mask = BinaryMask::empty(grid).unwrap();
        mask.set(2, 1, 3, true);
        let out = resample_mask(&mask, &grid).unwrap();
        assert_eq!(out, mask);
    }
}
