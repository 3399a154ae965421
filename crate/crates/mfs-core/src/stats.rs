//! Paired statistics and summary descriptors for metric series.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::CoreError;

/// Classical paired two-sided t-test on `d = x - y`.
///
/// Returns `(t, p)`. Identical differences everywhere (zero variance)
/// are reported as an error rather than a silent p of zero.
pub fn paired_t_test(x: &[f64], y: &[f64]) -> Result<(f64, f64), CoreError> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(CoreError::BadSeries);
    }
    let n = x.len() as f64;
    let d: Vec<f64> = x.iter().zip(y).map(|(a, b)| a - b).collect();
    let mean = d.iter().sum::<f64>() / n;
    let var = d.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    if var == 0.0 {
        return Err(CoreError::DegenerateVariance);
    }
    let t = mean / (var.sqrt() / n.sqrt());
    let dist = StudentsT::new(0.0, 1.0, n - 1.0).expect("valid dof");
    let p = 2.0 * dist.cdf(-t.abs());
    Ok((t, p))
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample standard deviation (n-1 denominator); 0 for length-1 series.
pub fn sample_sd(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    (xs.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (xs.len() as f64 - 1.0)).sqrt()
}

/// Boxplot five-number summary (min, q1, median, q3, max),
/// with quartiles by linear interpolation of order statistics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FiveNumber {
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
}

pub fn five_number(xs: &[f64]) -> FiveNumber {
    let mut s = xs.to_vec();
    s.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let q = |p: f64| -> f64 {
        let h = p * (s.len() as f64 - 1.0);
        let lo = h.floor() as usize;
        let hi = h.ceil() as usize;
        s[lo] + (h - lo as f64) * (s[hi] - s[lo])
    };
    FiveNumber {
        min: s[0],
        q1: q(0.25),
        median: q(0.5),
        q3: q(0.75),
        max: s[s.len() - 1],
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn symmetric_differences_give_t_zero_p_one() {
        let x = vec![2.0, 0.0, 2.0, 0.0];
        let y = vec![1.0, 1.0, 1.0, 1.0];
        let (t, p) = paired_t_test(&x, &y).unwrap();
        assert_eq!(t, 0.0);
        assert!((p - 1.0).abs() < 1e-12);
    }

    #[test]
    fn hand_computed_t_and_p() {
        // d = {1,2,3,4}: mean 2.5, sd sqrt(5/3), t = 2.5/(sd/2) = 3.872983...
        let x = vec![1.0, 2.0, 3.0, 4.0];
        let y = vec![0.0, 0.0, 0.0, 0.0];
        let (t, p) = paired_t_test(&x, &y).unwrap();
        assert!((t - 3.873).abs() <= 1e-3, "t = {t}");
        assert!((p - 0.0305).abs() <= 1e-3, "p = {p}");
    }

    #[test]
    fn identical_series_is_degenerate() {
        let x = vec![1.0, 2.0, 3.0];
        assert!(matches!(
            paired_t_test(&x, &x),
            Err(CoreError::DegenerateVariance)
        ));
    }

    #[test]
    fn t_is_antisymmetric_p_symmetric_under_swap() {
        let x = vec![3.0, 5.0, 2.0, 8.0, 4.0];
        let y = vec![1.0, 6.0, 1.0, 4.0, 2.0];
        let (t1, p1) = paired_t_test(&x, &y).unwrap();
        let (t2, p2) = paired_t_test(&y, &x).unwrap();
        assert!((t1 + t2).abs() < 1e-12);
        assert!((p1 - p2).abs() < 1e-12);
    }

    #[test]
    fn five_number_on_known_series() {
        let xs = vec![1.0, 2.0, 3.0, 4.0, 5.0];
        let f = five_number(&xs);
        assert_eq!(f.min, 1.0);
        assert_eq!(f.q1, 2.0);
        assert_eq!(f.median, 3.0);
        assert_eq!(f.q3, 4.0);
        assert_eq!(f.max, 5.0);
    }

    #[test]
    fn mean_and_sd() {
        let xs = vec![2.0, 4.0, 4.0, 4.0, 5.0, 5.0, 7.0, 9.0];
        assert_eq!(mean(&xs), 5.0);
        assert!((sample_sd(&xs) - (32.0f64 / 7.0).sqrt()).abs() < 1e-12);
    }
}
