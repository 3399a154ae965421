//! Analytic dose model: prescription inside the PTV, exponential decay
//! with exact Euclidean distance to the PTV voxel set outside. Not a
//! beam model; it exists so DVH arithmetic has a dose field with
//! controlled geometry.

use mfs_core::volume::{BinaryMask, Modality, ScalarVolume};

use crate::error::PhantomError;

/// Exact squared Euclidean distance transform (separable parabola
/// envelope), anisotropic spacing, distances in mm to the true set.
fn edt_squared(mask: &BinaryMask) -> Vec<f64> {
    let [nz, ny, nx] = mask.grid.shape;
    let [dz, dy, dx] = mask.grid.spacing_mm;
    let mut f: Vec<f64> = mask
        .values
        .iter()
        .map(|&m| if m { 0.0 } else { f64::INFINITY })
        .collect();

    let mut scratch = vec![0.0f64; nz.max(ny).max(nx)];
    let mut line = vec![0.0f64; nz.max(ny).max(nx)];
    // x axis.
    for z in 0..nz {
        for y in 0..ny {
            let base = (z * ny + y) * nx;
            line[..nx].copy_from_slice(&f[base..base + nx]);
            dt_1d(&line[..nx], dx, &mut scratch[..nx]);
            f[base..base + nx].copy_from_slice(&scratch[..nx]);
        }
    }
    // y axis.
    for z in 0..nz {
        for x in 0..nx {
            for y in 0..ny {
                line[y] = f[(z * ny + y) * nx + x];
            }
            dt_1d(&line[..ny], dy, &mut scratch[..ny]);
            for y in 0..ny {
                f[(z * ny + y) * nx + x] = scratch[y];
            }
        }
    }
    // z axis.
    for y in 0..ny {
        for x in 0..nx {
            for z in 0..nz {
                line[z] = f[(z * ny + y) * nx + x];
            }
            dt_1d(&line[..nz], dz, &mut scratch[..nz]);
            for z in 0..nz {
                f[(z * ny + y) * nx + x] = scratch[z];
            }
        }
    }
    f
}

/// 1D squared distance transform with sample spacing `s` (Felzenszwalb &
/// Huttenlocher lower envelope).
fn dt_1d(f: &[f64], s: f64, out: &mut [f64]) {
    let n = f.len();
    let s2 = s * s;
    let mut v = vec![0usize; n];
    let mut z = vec![0.0f64; n + 1];
    let mut k = 0usize;
    v[0] = 0;
    z[0] = f64::NEG_INFINITY;
    z[1] = f64::INFINITY;
    for q in 1..n {
        if f[q].is_infinite() {
            continue;
        }
        loop {
            let p = v[k];
            if f[p].is_infinite() {
                // Degenerate apex: replace it.
                if k == 0 {
                    v[0] = q;
                    z[0] = f64::NEG_INFINITY;
                    z[1] = f64::INFINITY;
                    break;
                }
                k -= 1;
                continue;
            }
            let sq = (f[q] + (q * q) as f64 * s2 - f[p] - (p * p) as f64 * s2)
                / (2.0 * s2 * (q as f64 - p as f64));
            if sq <= z[k] {
                if k == 0 {
                    v[0] = q;
                    z[0] = f64::NEG_INFINITY;
                    z[1] = f64::INFINITY;
                    break;
                }
                k -= 1;
            } else {
                k += 1;
                v[k] = q;
                z[k] = sq;
                z[k + 1] = f64::INFINITY;
                break;
            }
        }
    }
    if f[v[0]].is_infinite() {
        // Entire line unset.
        out[..n].copy_from_slice(&f[..n]);
        return;
    }
    let mut k = 0usize;
    for q in 0..n {
        while z[k + 1] < q as f64 {
            k += 1;
        }
        let p = v[k];
        let d = q as f64 - p as f64;
        out[q] = d * d * s2 + f[p];
    }
}

pub fn synth_dose(
    ptv: &BinaryMask,
    prescription_gy: f64,
    falloff_mm: f64,
) -> Result<ScalarVolume, PhantomError> {
    if !(prescription_gy > 0.0) {
        return Err(PhantomError::InvalidPrescription(prescription_gy));
    }
    if !(falloff_mm > 0.0) {
        return Err(PhantomError::InvalidConfig(format!(
            "falloff must be > 0 mm, got {falloff_mm}"
        )));
    }
    if ptv.is_empty_mask() {
        return Err(PhantomError::Core(mfs_core::CoreError::EmptyReference(
            "PTV mask is empty".into(),
        )));
    }
    let grid = ptv.grid;
    let d2 = edt_squared(ptv);
    let values = d2
        .iter()
        .map(|&q| (prescription_gy * (-q.sqrt() / falloff_mm).exp()) as f32)
        .collect();
    Ok(ScalarVolume::new(grid, Modality::Dose, values)?)
}
