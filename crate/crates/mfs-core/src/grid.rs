use serde::{Deserialize, Serialize};

use crate::error::CoreError;

/// A 3D voxel lattice in physical space.
///
/// Axis order is `(z, y, x)` throughout, with z increasing in the
/// cranial-to-caudal direction. `origin_mm` is the physical position of
/// the center of voxel `(0, 0, 0)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    /// Voxel counts `(nz, ny, nx)`.
    pub shape: [usize; 3],
    /// Voxel spacing `(dz, dy, dx)` in mm; all components > 0.
    pub spacing_mm: [f64; 3],
    /// Physical position of voxel (0,0,0) center, in mm.
    pub origin_mm: [f64; 3],
}

impl GridSpec {
    pub fn new(shape: [usize; 3], spacing_mm: [f64; 3], origin_mm: [f64; 3]) -> Self {
        Self {
            shape,
            spacing_mm,
            origin_mm,
        }
    }

    /// Isotropic-origin grid with the given shape and spacing.
    pub fn with_spacing(shape: [usize; 3], spacing_mm: [f64; 3]) -> Self {
        Self::new(shape, spacing_mm, [0.0; 3])
    }

    pub fn validate(&self) -> Result<(), CoreError> {
        if self.shape.iter().any(|&n| n < 1) {
            return Err(CoreError::InvalidGrid(format!(
                "shape components must be >= 1, got {:?}",
                self.shape
            )));
        }
        if self.spacing_mm.iter().any(|&s| !(s > 0.0)) {
            return Err(CoreError::InvalidGrid(format!(
                "spacing components must be > 0, got {:?}",
                self.spacing_mm
            )));
        }
        Ok(())
    }

    pub fn voxel_count(&self) -> usize {
        self.shape[0] * self.shape[1] * self.shape[2]
    }

    /// Flat index of voxel `(z, y, x)` in z-major order.
    #[inline]
    pub fn index(&self, z: usize, y: usize, x: usize) -> usize {
        (z * self.shape[1] + y) * self.shape[2] + x
    }

    /// Physical position (mm) of a voxel center.
    #[inline]
    pub fn voxel_center_mm(&self, z: usize, y: usize, x: usize) -> [f64; 3] {
        [
            self.origin_mm[0] + z as f64 * self.spacing_mm[0],
            self.origin_mm[1] + y as f64 * self.spacing_mm[1],
            self.origin_mm[2] + x as f64 * self.spacing_mm[2],
        ]
    }

    /// Physical z coordinate (mm) of an axial slice.
    #[inline]
    pub fn slice_z_mm(&self, z: usize) -> f64 {
        self.origin_mm[0] + z as f64 * self.spacing_mm[0]
    }

    /// Continuous voxel index of a physical point (mm).
    #[inline]
    pub fn continuous_index(&self, p_mm: [f64; 3]) -> [f64; 3] {
        [
            (p_mm[0] - self.origin_mm[0]) / self.spacing_mm[0],
            (p_mm[1] - self.origin_mm[1]) / self.spacing_mm[1],
            (p_mm[2] - self.origin_mm[2]) / self.spacing_mm[2],
        ]
    }
}
