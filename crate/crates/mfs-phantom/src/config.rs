use serde::{Deserialize, Serialize};

use mfs_core::grid::GridSpec;

use crate::error::PhantomError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhantomConfig {
    #[serde(default = "default_grid")]
    pub grid: GridSpec,
    #[serde(default = "default_vessel_radius")]
    pub vessel_radius_mm: f64,
    /// Dimensionless amplitude knob for the vessel centerline sinusoid.
    #[serde(default = "default_curvature")]
    pub vessel_curvature: f64,
    /// Per-axis maximum rigid MRI offset (mm); realized offsets are
    /// whole voxels so integer-shift recovery is exact.
    #[serde(default = "default_offset_range")]
    pub offset_range_mm: f64,
    #[serde(default = "default_dilation")]
    pub noise_dilation_vox: usize,
    #[serde(default = "default_jitter")]
    pub extent_jitter_slices: usize,
    /// Target range for the fraction of noisy-label voxels that are
    /// muscle/bone contamination (voxels outside the clean label).
    #[serde(default = "default_contamination")]
    pub contamination_target: [f64; 2],
    pub seed: u64,
}

fn default_grid() -> GridSpec {
    GridSpec::with_spacing([64, 64, 64], [2.0, 1.0, 1.0])
}
fn default_vessel_radius() -> f64 {
    2.0
}
fn default_curvature() -> f64 {
    1.0
}
fn default_offset_range() -> f64 {
    3.0
}
fn default_dilation() -> usize {
    1
}
fn default_jitter() -> usize {
    3
}
fn default_contamination() -> [f64; 2] {
    [0.15, 0.35]
}

impl PhantomConfig {
    pub fn with_seed(seed: u64) -> Self {
        Self {
            grid: default_grid(),
            vessel_radius_mm: default_vessel_radius(),
            vessel_curvature: default_curvature(),
            offset_range_mm: default_offset_range(),
            noise_dilation_vox: default_dilation(),
            extent_jitter_slices: default_jitter(),
            contamination_target: default_contamination(),
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), PhantomError> {
        self.grid
            .validate()
            .map_err(|e| PhantomError::InvalidConfig(e.to_string()))?;
        if !(self.vessel_radius_mm > 0.0) {
            return Err(PhantomError::InvalidConfig(
                "vessel_radius_mm must be > 0".into(),
            ));
        }
        let [lo, hi] = self.contamination_target;
        if !(0.0..1.0).contains(&lo) || !(0.0..1.0).contains(&hi) || lo > hi {
            return Err(PhantomError::InvalidConfig(
                "contamination_target must satisfy 0 <= lo <= hi < 1".into(),
            ));
        }
        if self.offset_range_mm < 0.0 {
            return Err(PhantomError::InvalidConfig(
                "offset_range_mm must be >= 0".into(),
            ));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_is_valid() {
        assert!(PhantomConfig::with_seed(1).validate().is_ok());
    }

    #[test]
    fn bad_configs_are_rejected() {
        let mut c = PhantomConfig::with_seed(1);
        c.vessel_radius_mm = 0.0;
        assert!(c.validate().is_err());
        let mut c = PhantomConfig::with_seed(1);
        c.contamination_target = [0.5, 0.2];
        assert!(c.validate().is_err());
        let mut c = PhantomConfig::with_seed(1);
        c.contamination_target = [0.2, 1.0];
        assert!(c.validate().is_err());
    }
}
