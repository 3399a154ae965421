//! Intensity preprocessing: slice-wise contrast-limited adaptive
//! histogram equalization for CT, min-max normalization for MRI.
//!
//! CLAHE recipe (fixed so runs are reproducible): HU clipped to
//! [-1000, 1500] and binned into 256 levels over that fixed range; each
//! axial slice is divided into an 8x8 tile grid; per-tile histograms are
//! clipped at `clip_limit * tile_pixels` (floor 1.0) with the excess
//! redistributed uniformly; per-pixel output bilinearly interpolates the
//! four surrounding tile CDFs. A constant slice has no contrast to
//! equalize and passes through as zeros, and a final min-max rescale
//! guard keeps the whole volume in [0, 1].

use serde::{Deserialize, Serialize};

use mfs_core::par::for_each_chunk_mut;
use mfs_core::volume::{Modality, ScalarVolume};

use crate::error::NnError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClaheConfig {
    pub tiles: usize,
    pub clip_limit: f64,
    pub bins: usize,
    pub hu_min: f32,
    pub hu_max: f32,
}

impl Default for ClaheConfig {
    fn default() -> Self {
        Self {
            tiles: 8,
            clip_limit: 0.01,
            bins: 256,
            hu_min: -1000.0,
            hu_max: 1500.0,
        }
    }
}

fn check_modality(vol: &ScalarVolume, expected: Modality) -> Result<(), NnError> {
    if vol.modality != expected {
        return Err(NnError::InvalidConfig(format!(
            "expected {} volume, got {}",
            match expected {
                Modality::Ct => "CT",
                Modality::Mri => "MRI",
                Modality::Dose => "DOSE",
            },
            vol.modality.as_str()
        )));
    }
    Ok(())
}

/// Slice-wise CLAHE on clipped HU, rescaled into [0, 1].
pub fn preprocess_ct(ct: &ScalarVolume, cfg: &ClaheConfig) -> Result<Vec<f32>, NnError> {
    check_modality(ct, Modality::Ct)?;
    let [_, ny, nx] = ct.grid.shape;
    let plane = ny * nx;
    let mut out = vec![0.0f32; ct.values.len()];

    for_each_chunk_mut(&mut out, plane, |z, dst| {
        let src = &ct.values[z * plane..(z + 1) * plane];
        clahe_slice(src, ny, nx, cfg, dst);
    });

    // Rescale guard: constant volumes (all-equal CLAHE output) become zeros.
    let mut min = f32::INFINITY;
    let mut max = f32::NEG_INFINITY;
    for &v in &out {
        min = min.min(v);
        max = max.max(v);
    }
    if max > min {
        let span = max - min;
        for v in out.iter_mut() {
            *v = (*v - min) / span;
        }
    } else {
        out.fill(0.0);
    }
    Ok(out)
}

fn clahe_slice(src: &[f32], ny: usize, nx: usize, cfg: &ClaheConfig, dst: &mut [f32]) {
    let bins = cfg.bins;
    let lo = cfg.hu_min;
    let hi = cfg.hu_max;
    let scale = (bins - 1) as f32 / (hi - lo);
    let bin_of = |v: f32| -> usize { ((v.clamp(lo, hi) - lo) * scale).round() as usize };

    // Constant slice: nothing to equalize.
    let first = src[0];
    if src.iter().all(|&v| v == first) {
        dst.fill(0.0);
        return;
    }

    let tiles = cfg.tiles.max(1);
    let ty = tiles.min(ny);
    let tx = tiles.min(nx);
    // Tile boundaries by even division with remainder spread over the
    // leading tiles.
    let bounds = |n: usize, t: usize, i: usize| -> (usize, usize) {
        let base = n / t;
        let rem = n % t;
        let lo = i * base + i.min(rem);
        let hi = lo + base + (i < rem) as usize;
        (lo, hi)
    };

    // Per-tile clipped CDFs.
    let mut cdfs = vec![0.0f32; ty * tx * bins];
    for iy in 0..ty {
        let (y0, y1) = bounds(ny, ty, iy);
        for ix in 0..tx {
            let (x0, x1) = bounds(nx, tx, ix);
            let area = ((y1 - y0) * (x1 - x0)) as f64;
            let mut hist = vec![0.0f64; bins];
            for y in y0..y1 {
                for x in x0..x1 {
                    hist[bin_of(src[y * nx + x])] += 1.0;
                }
            }
            // Clip and redistribute.
            let limit = (cfg.clip_limit * area).max(1.0);
            let mut excess = 0.0;
            for h in hist.iter_mut() {
                if *h > limit {
                    excess += *h - limit;
                    *h = limit;
                }
            }
            let add = excess / bins as f64;
            for h in hist.iter_mut() {
                *h += add;
            }
            // CDF normalized to [0, 1].
            let cdf = &mut cdfs[(iy * tx + ix) * bins..(iy * tx + ix) * bins + bins];
            let mut acc = 0.0;
            for (b, h) in hist.iter().enumerate() {
                acc += h;
                cdf[b] = (acc / area) as f32;
            }
        }
    }

    // Bilinear interpolation between the four surrounding tile mappings.
    let center = |n: usize, t: usize, i: usize| -> f32 {
        let (lo, hi) = bounds(n, t, i);
        (lo + hi) as f32 / 2.0
    };
    for y in 0..ny {
        // Find the tile pair bracketing this row.
        let fy = {
            let mut iy1 = 0;
            while iy1 + 1 < ty && center(ny, ty, iy1 + 1) <= y as f32 {
                iy1 += 1;
            }
            iy1
        };
        let (ty0, ty1, wy) = {
            let c = center(ny, ty, fy);
            if (y as f32) < c || fy + 1 >= ty {
                if fy == 0 || (y as f32) >= c {
                    (fy, fy, 0.0)
                } else {
                    let c0 = center(ny, ty, fy - 1);
                    (fy - 1, fy, (y as f32 - c0) / (c - c0))
                }
            } else {
                let c1 = center(ny, ty, fy + 1);
                (fy, fy + 1, (y as f32 - c) / (c1 - c))
            }
        };
        for x in 0..nx {
            let fx = {
                let mut ix1 = 0;
                while ix1 + 1 < tx && center(nx, tx, ix1 + 1) <= x as f32 {
                    ix1 += 1;
                }
                ix1
            };
            let (tx0, tx1, wx) = {
                let c = center(nx, tx, fx);
                if (x as f32) < c || fx + 1 >= tx {
                    if fx == 0 || (x as f32) >= c {
                        (fx, fx, 0.0)
                    } else {
                        let c0 = center(nx, tx, fx - 1);
                        (fx - 1, fx, (x as f32 - c0) / (c - c0))
                    }
                } else {
                    let c1 = center(nx, tx, fx + 1);
                    (fx, fx + 1, (x as f32 - c) / (c1 - c))
                }
            };
            let b = bin_of(src[y * nx + x]);
            let v00 = cdfs[(ty0 * tx + tx0) * cfg.bins + b];
            let v01 = cdfs[(ty0 * tx + tx1) * cfg.bins + b];
            let v10 = cdfs[(ty1 * tx + tx0) * cfg.bins + b];
            let v11 = cdfs[(ty1 * tx + tx1) * cfg.bins + b];
            let top = v00 * (1.0 - wx) + v01 * wx;
            let bot = v10 * (1.0 - wx) + v11 * wx;
            dst[y * nx + x] = top * (1.0 - wy) + bot * wy;
        }
    }
}

/// Min-max normalization to [0, 1]; constant volumes become zeros.
pub fn preprocess_mri(mri: &ScalarVolume) -> Result<Vec<f32>, NnError> {
    check_modality(mri, Modality::Mri)?;
    let mut min = f32::INFINITY;
    let mut max = f32::NEG_INFINITY;
    for &v in &mri.values {
        min = min.min(v);
        max = max.max(v);
    }
    if max <= min {
        return Ok(vec![0.0; mri.values.len()]);
    }
    let span = max - min;
    Ok(mri.values.iter().map(|&v| (v - min) / span).collect())
}
