//! Dose-volume arithmetic: cumulative DVH, mean dose, and Vd
//! (percent of ROI volume receiving at least a threshold dose).

use crate::error::CoreError;
use crate::volume::{require_same_grid, BinaryMask, ScalarVolume};

/// Mean dose (Gy) over the ROI.
pub fn dmean(dose: &ScalarVolume, roi: &BinaryMask) -> Result<f64, CoreError> {
    require_same_grid(&dose.grid, &roi.grid, "dmean")?;
    let mut sum = 0.0f64;
    let mut n = 0usize;
    for (&d, &m) in dose.values.iter().zip(&roi.values) {
        if m {
            sum += d as f64;
            n += 1;
        }
    }
    if n == 0 {
        return Err(CoreError::EmptyRoi);
    }
    Ok(sum / n as f64)
}

/// Percent of ROI volume receiving at least `threshold_gy` (V20 is
/// `vd(dose, roi, 20.0)`).
pub fn vd(dose: &ScalarVolume, roi: &BinaryMask, threshold_gy: f64) -> Result<f64, CoreError> {
    require_same_grid(&dose.grid, &roi.grid, "vd")?;
    let mut hit = 0usize;
    let mut n = 0usize;
    for (&d, &m) in dose.values.iter().zip(&roi.values) {
        if m {
            n += 1;
            if d as f64 >= threshold_gy {
                hit += 1;
            }
        }
    }
    if n == 0 {
        return Err(CoreError::EmptyRoi);
    }
    Ok(100.0 * hit as f64 / n as f64)
}

/// Cumulative DVH: `(dose_gy, pct_volume)` rows at bin edges
/// `0, bin_gy, 2*bin_gy, ...` up to the first edge at or above the ROI
/// maximum. Monotone non-increasing with `DVH(0) = 100`.
pub fn dvh(
    dose: &ScalarVolume,
    roi: &BinaryMask,
    bin_gy: f64,
) -> Result<Vec<(f64, f64)>, CoreError> {
    require_same_grid(&dose.grid, &roi.grid, "dvh")?;
    if !(bin_gy > 0.0) {
        return Err(CoreError::InvalidGrid(format!(
            "dvh bin must be > 0, got {bin_gy}"
        )));
    }
    let doses: Vec<f64> = dose
        .values
        .iter()
        .zip(&roi.values)
        .filter(|(_, &m)| m)
        .map(|(&d, _)| d as f64)
        .collect();
    if doses.is_empty() {
        return Err(CoreError::EmptyRoi);
    }
    let max = doses.iter().fold(0.0f64, |m, &d| m.max(d));
    let n_edges = (max / bin_gy).ceil() as usize + 1;
    let n = doses.len() as f64;
    let mut curve = Vec::with_capacity(n_edges);
    for k in 0..n_edges {
        let edge = k as f64 * bin_gy;
        let frac = doses.iter().filter(|&&d| d >= edge).count() as f64 / n;
        curve.push((edge, 100.0 * frac));
    }
    Ok(curve)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::GridSpec;
    use crate::volume::Modality;

    fn grid() -> GridSpec {
        GridSpec::with_spacing([4, 4, 4], [1.0; 3])
    }

    fn full_roi() -> BinaryMask {
        BinaryMask::new(grid(), vec![true; 64]).unwrap()
    }

    #[test]
    fn uniform_dose_dmean_and_v20() {
        let dose = ScalarVolume::filled(grid(), Modality::Dose, 25.0).unwrap();
        let roi = full_roi();
        assert_eq!(dmean(&dose, &roi).unwrap(), 25.0);
        assert_eq!(vd(&dose, &roi, 20.0).unwrap(), 100.0);
        let dose = ScalarVolume::filled(grid(), Modality::Dose, 10.0).unwrap();
        assert_eq!(vd(&dose, &roi, 20.0).unwrap(), 0.0);
    }

    #[test]
    fn half_and_half_hand_count() {
        let mut values = vec![30.0f32; 32];
        values.extend(vec![10.0f32; 32]);
        let dose = ScalarVolume::new(grid(), Modality::Dose, values).unwrap();
        let roi = full_roi();
        assert_eq!(dmean(&dose, &roi).unwrap(), 20.0);
        assert_eq!(vd(&dose, &roi, 20.0).unwrap(), 50.0);
    }

    #[test]
    fn dvh_starts_at_100_and_never_increases() {
        let values: Vec<f32> = (0..64).map(|i| i as f32 * 0.7).collect();
        let dose = ScalarVolume::new(grid(), Modality::Dose, values).unwrap();
        let roi = full_roi();
        let curve = dvh(&dose, &roi, 2.5).unwrap();
        assert_eq!(curve[0].0, 0.0);
        assert_eq!(curve[0].1, 100.0);
        for w in curve.windows(2) {
            assert!(w[1].1 <= w[0].1);
        }
    }

    #[test]
    fn empty_roi_is_an_error() {
        let dose = ScalarVolume::filled(grid(), Modality::Dose, 1.0).unwrap();
        let roi = BinaryMask::empty(grid()).unwrap();
        assert!(matches!(dmean(&dose, &roi), Err(CoreError::EmptyRoi)));
        assert!(matches!(vd(&dose, &roi, 20.0), Err(CoreError::EmptyRoi)));
        assert!(matches!(dvh(&dose, &roi, 1.0), Err(CoreError::EmptyRoi)));
    }
}
