use serde::{Deserialize, Serialize};

use crate::error::CoreError;
use crate::grid::GridSpec;

/// Image modality of a [`ScalarVolume`].
///
/// CT values are Hounsfield units, MRI values are arbitrary units, dose
/// values are Gy (and must be non-negative).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Modality {
    #[serde(rename = "CT")]
    Ct,
    #[serde(rename = "MRI")]
    Mri,
    #[serde(rename = "DOSE")]
    Dose,
}

impl Modality {
    pub fn as_str(&self) -> &'static str {
        match self {
            Modality::Ct => "CT",
            Modality::Mri => "MRI",
            Modality::Dose => "DOSE",
        }
    }
}

/// Dense 3D scalar field on a [`GridSpec`], one f32 per voxel, z-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarVolume {
    pub grid: GridSpec,
    pub modality: Modality,
    pub values: Vec<f32>,
}

impl ScalarVolume {
    pub fn new(grid: GridSpec, modality: Modality, values: Vec<f32>) -> Result<Self, CoreError> {
        grid.validate()?;
        if values.len() != grid.voxel_count() {
            return Err(CoreError::InvalidGrid(format!(
                "value count {} != shape product {}",
                values.len(),
                grid.voxel_count()
            )));
        }
        Ok(Self {
            grid,
            modality,
            values,
        })
    }

    pub fn filled(grid: GridSpec, modality: Modality, value: f32) -> Result<Self, CoreError> {
        let n = grid.voxel_count();
        Self::new(grid, modality, vec![value; n])
    }

    #[inline]
    pub fn at(&self, z: usize, y: usize, x: usize) -> f32 {
        self.values[self.grid.index(z, y, x)]
    }

    #[inline]
    pub fn at_mut(&mut self, z: usize, y: usize, x: usize) -> &mut f32 {
        let i = self.grid.index(z, y, x);
        &mut self.values[i]
    }
}

/// Dense 3D boolean field on the same lattice contract as [`ScalarVolume`].
#[derive(Debug, Clone, PartialEq)]
pub struct BinaryMask {
    pub grid: GridSpec,
    pub values: Vec<bool>,
}

impl BinaryMask {
    pub fn new(grid: GridSpec, values: Vec<bool>) -> Result<Self, CoreError> {
        grid.validate()?;
        if values.len() != grid.voxel_count() {
            return Err(CoreError::InvalidGrid(format!(
                "value count {} != shape product {}",
                values.len(),
                grid.voxel_count()
            )));
        }
        Ok(Self { grid, values })
    }

    pub fn empty(grid: GridSpec) -> Result<Self, CoreError> {
        let n = grid.voxel_count();
        Self::new(grid, vec![false; n])
    }

    #[inline]
    pub fn at(&self, z: usize, y: usize, x: usize) -> bool {
        self.values[self.grid.index(z, y, x)]
    }

    #[inline]
    pub fn set(&mut self, z: usize, y: usize, x: usize, v: bool) {
        let i = self.grid.index(z, y, x);
        self.values[i] = v;
    }

    pub fn count(&self) -> usize {
        self.values.iter().filter(|&&v| v).count()
    }

    pub fn is_empty_mask(&self) -> bool {
        !self.values.iter().any(|&v| v)
    }
}

/// Check two grids are identical (shape, spacing, origin); used as the
/// shared-lattice precondition for voxelwise operations.
pub fn require_same_grid(a: &GridSpec, b: &GridSpec, what: &str) -> Result<(), CoreError> {
    if a != b {
        return Err(CoreError::GridMismatch(format!(
            "{what}: {a:?} vs {b:?}"
        )));
    }
    Ok(())
}
