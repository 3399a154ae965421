//! Spatial augmentation: one rigid-ish transform (small rotation about
//! the z axis, isotropic scale, optional x flip) drawn per sample and
//! applied identically to CT, MRI and label. Images resample with
//! trilinear interpolation, labels with nearest-neighbor. The transform
//! acts in physical coordinates about the volume center, so anisotropic
//! slices stay consistent across modalities.

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use mfs_core::grid::GridSpec;
use mfs_core::par::for_each_chunk_mut;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugConfig {
    pub enabled: bool,
    /// Maximum rotation magnitude about z, degrees (draw is uniform in
    /// (-max, max)).
    pub max_rot_deg: f64,
    pub scale_range: [f64; 2],
    pub flip_x: bool,
}

impl Default for AugConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            max_rot_deg: 10.0,
            scale_range: [0.9, 1.1],
            flip_x: true,
        }
    }
}

/// A drawn transform; identity when `rot_rad == 0, scale == 1, !flip`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transform {
    pub rot_rad: f64,
    pub scale: f64,
    pub flip_x: bool,
}

impl Transform {
    pub const IDENTITY: Transform = Transform {
        rot_rad: 0.0,
        scale: 1.0,
        flip_x: false,
    };

    pub fn is_identity(&self) -> bool {
        self.rot_rad == 0.0 && self.scale == 1.0 && !self.flip_x
    }

    /// Draw one transform from a dedicated stream.
    pub fn draw(cfg: &AugConfig, seed: u64) -> Transform {
        if !cfg.enabled {
            return Transform::IDENTITY;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut unit = || (rng.next_u64() >> 11) as f64 / (1u64 << 53) as f64;
        let rot = (2.0 * unit() - 1.0) * cfg.max_rot_deg.to_radians();
        let scale = cfg.scale_range[0] + unit() * (cfg.scale_range[1] - cfg.scale_range[0]);
        let flip = cfg.flip_x && unit() < 0.5;
        Transform {
            rot_rad: rot,
            scale,
            flip_x: flip,
        }
    }

    /// Map an output voxel's physical point to the source sampling point
    /// (inverse mapping about the volume center).
    #[inline]
    fn source_point(&self, grid: &GridSpec, p: [f64; 3]) -> [f64; 3] {
        let c = [
            grid.origin_mm[0] + (grid.shape[0] - 1) as f64 * grid.spacing_mm[0] / 2.0,
            grid.origin_mm[1] + (grid.shape[1] - 1) as f64 * grid.spacing_mm[1] / 2.0,
            grid.origin_mm[2] + (grid.shape[2] - 1) as f64 * grid.spacing_mm[2] / 2.0,
        ];
        let mut dy = p[1] - c[1];
        let mut dx = p[2] - c[2];
        let dz = p[0] - c[0];
        if self.flip_x {
            dx = -dx;
        }
        // Inverse rotation and inverse scale in the axial plane; z only
        // scales.
        let (s, co) = (-self.rot_rad).sin_cos();
        let ry = co * dy - s * dx;
        let rx = s * dy + co * dx;
        dy = ry / self.scale;
        dx = rx / self.scale;
        [c[0] + dz / self.scale, c[1] + dy, c[2] + dx]
    }

    /// Resample a scalar field under this transform (trilinear, zero fill).
    pub fn apply_scalar(&self, grid: &GridSpec, values: &[f32]) -> Vec<f32> {
        if self.is_identity() {
            return values.to_vec();
        }
        let [_, ny, nx] = grid.shape;
        let plane = ny * nx;
        let mut out = vec![0.0f32; values.len()];
        for_each_chunk_mut(&mut out, plane, |z, dst| {
            for y in 0..ny {
                for x in 0..nx {
                    let p = grid.voxel_center_mm(z, y, x);
                    let q = self.source_point(grid, p);
                    let ci = grid.continuous_index(q);
                    dst[y * nx + x] = trilinear(values, grid.shape, ci);
                }
            }
        });
        out
    }

    /// Resample a boolean field under this transform (nearest, false fill).
    pub fn apply_mask(&self, grid: &GridSpec, values: &[bool]) -> Vec<bool> {
        if self.is_identity() {
            return values.to_vec();
        }
        let [nz, ny, nx] = grid.shape;
        let plane = ny * nx;
        let mut out = vec![false; values.len()];
        for_each_chunk_mut(&mut out, plane, |z, dst| {
            for y in 0..ny {
                for x in 0..nx {
                    let p = grid.voxel_center_mm(z, y, x);
                    let q = self.source_point(grid, p);
                    let ci = grid.continuous_index(q);
                    let (cz, cy, cx) = (ci[0].round(), ci[1].round(), ci[2].round());
                    dst[y * nx + x] = cz >= 0.0
                        && cy >= 0.0
                        && cx >= 0.0
                        && cz <= (nz - 1) as f64
                        && cy <= (ny - 1) as f64
                        && cx <= (nx - 1) as f64
                        && values[((cz as usize) * ny + cy as usize) * nx + cx as usize];
                }
            }
        });
        out
    }
}

#[inline]
fn trilinear(values: &[f32], shape: [usize; 3], ci: [f64; 3]) -> f32 {
    let [nz, ny, nx] = shape;
    let (cz, cy, cx) = (ci[0], ci[1], ci[2]);
    if cz < 0.0
        || cy < 0.0
        || cx < 0.0
        || cz > (nz - 1) as f64
        || cy > (ny - 1) as f64
        || cx > (nx - 1) as f64
    {
        return 0.0;
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
