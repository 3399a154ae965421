//! Training objective: soft overlap loss plus self-supervised muscle
//! and bone inclusion terms computed against HU-window masks of the CT.
//!
//! The overlap loss is the printed intersection-over-union form
//! `1 - (sum p*g + eps) / (sum p + sum g - sum p*g + eps)`; the
//! canonical soft-Dice variant is available behind a switch. Inclusion
//! is `sum p*m / (sum p + eps)`: the fraction of predicted mass lying
//! inside a tissue mask (0 when the prediction is empty). Set
//! operations are relaxed to voxelwise products over soft
//! probabilities, which is what makes all terms differentiable.

use serde::{Deserialize, Serialize};

use mfs_core::par::sum_indexed_f64;

use crate::error::NnError;
use crate::tensor::{Element, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum OverlapForm {
    /// Literal printed form: soft intersection over soft union.
    #[default]
    #[serde(rename = "iou")]
    Iou,
    /// Canonical soft Dice.
    #[serde(rename = "dice")]
    Dice,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub w_m: f64,
    pub w_b: f64,
    pub epsilon: f64,
    #[serde(default)]
    pub overlap_form: OverlapForm,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            w_m: 0.1,
            w_b: 0.01,
            epsilon: 1e-6,
            overlap_form: OverlapForm::Iou,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<(), NnError> {
        if self.w_m < 0.0 || self.w_b < 0.0 {
            return Err(NnError::InvalidConfig("loss weights must be >= 0".into()));
        }
        if !(self.epsilon > 0.0) {
            return Err(NnError::InvalidConfig("epsilon must be > 0".into()));
        }
        Ok(())
    }
}

/// Per-term values of one loss evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub overlap: f64,
    pub muscle: f64,
    pub bone: f64,
}

fn check_same_len<F: Element>(pred: &Tensor<F>, len: usize, what: &str) -> Result<(), NnError> {
    if pred.numel() != len {
        return Err(NnError::ShapeMismatch(format!(
            "{what}: prediction has {} voxels, mask has {len}",
            pred.numel()
        )));
    }
    Ok(())
}

fn check_range<F: Element>(pred: &Tensor<F>) -> Result<(), NnError> {
    for (i, v) in pred.data.iter().enumerate() {
        let v = v.to_f64_lossy();
        if !(0.0..=1.0).contains(&v) {
            return Err(NnError::PredOutOfRange(v, i));
        }
    }
    Ok(())
}

/// Soft overlap loss between a probability volume and a binary target.
pub fn overlap_loss<F: Element>(
    pred: &Tensor<F>,
    gt: &[bool],
    form: OverlapForm,
    epsilon: f64,
) -> Result<f64, NnError> {
    check_same_len(pred, gt.len(), "overlap_loss")?;
    check_range(pred)?;
    let (value, _, _, _) = overlap_sums(pred, gt, form, epsilon);
    Ok(value)
}

/// Returns (loss, sum_p, sum_g, sum_pg).
fn overlap_sums<F: Element>(
    pred: &Tensor<F>,
    gt: &[bool],
    form: OverlapForm,
    epsilon: f64,
) -> (f64, f64, f64, f64) {
    let p = &pred.data;
    let sum_p = sum_indexed_f64(p.len(), |i| p[i].to_f64_lossy());
    let sum_g = gt.iter().filter(|&&g| g).count() as f64;
    let sum_pg = sum_indexed_f64(p.len(), |i| if gt[i] { p[i].to_f64_lossy() } else { 0.0 });
    let loss = match form {
        OverlapForm::Iou => {
            let union = sum_p + sum_g - sum_pg;
            1.0 - (sum_pg + epsilon) / (union + epsilon)
        }
        OverlapForm::Dice => 1.0 - (2.0 * sum_pg + epsilon) / (sum_p + sum_g + epsilon),
    };
    (loss, sum_p, sum_g, sum_pg)
}

/// Fraction of predicted mass inside `tissue`: `sum p*m / (sum p + eps)`.
pub fn inclusion_loss<F: Element>(
    pred: &Tensor<F>,
    tissue: &[bool],
    epsilon: f64,
) -> Result<f64, NnError> {
    check_same_len(pred, tissue.len(), "inclusion_loss")?;
    check_range(pred)?;
    let (value, _, _) = inclusion_sums(pred, tissue, epsilon);
    Ok(value)
}

fn inclusion_sums<F: Element>(pred: &Tensor<F>, tissue: &[bool], epsilon: f64) -> (f64, f64, f64) {
    let p = &pred.data;
    let sum_p = sum_indexed_f64(p.len(), |i| p[i].to_f64_lossy());
    let sum_pm = sum_indexed_f64(p.len(), |i| if tissue[i] { p[i].to_f64_lossy() } else { 0.0 });
    (sum_pm / (sum_p + epsilon), sum_p, sum_pm)
}

/// Combined objective with per-term breakdown and the gradient with
/// respect to the prediction. Terms with zero weight are skipped in the
/// total (and its gradient), so `w_m = w_b = 0` collapses bitwise to the
/// overlap loss alone; the breakdown still reports them for logging.
pub fn total_loss<F: Element>(
    pred: &Tensor<F>,
    gt: &[bool],
    muscle: &[bool],
    bone: &[bool],
    weights: &LossWeights,
) -> Result<(LossBreakdown, Tensor<F>), NnError> {
    weights.validate()?;
    check_same_len(pred, gt.len(), "total_loss gt")?;
    check_same_len(pred, muscle.len(), "total_loss muscle")?;
    check_same_len(pred, bone.len(), "total_loss bone")?;
    check_range(pred)?;

    let eps = weights.epsilon;
    let (l_overlap, sum_p, sum_g, sum_pg) = overlap_sums(pred, gt, weights.overlap_form, eps);
    let (l_muscle, _, sum_pm_m) = inclusion_sums(pred, muscle, eps);
    let (l_bone, _, sum_pm_b) = inclusion_sums(pred, bone, eps);

    let mut total = l_overlap;
    if weights.w_m > 0.0 {
        total += weights.w_m * l_muscle;
    }
    if weights.w_b > 0.0 {
        total += weights.w_b * l_bone;
    }

    // Gradient pieces; all scalar prefactors in f64.
    let mut grad = Tensor::zeros(pred.shape);
    let denom_p = sum_p + eps;
    let (ov_a, ov_b);
    match weights.overlap_form {
        OverlapForm::Iou => {
            let u = sum_p + sum_g - sum_pg + eps;
            let i = sum_pg + eps;
            // dL/dp = -(g*u - i*(1-g))/u^2 = (i - g*(u + i))/u^2... expanded below.
            ov_a = -(u + i) / (u * u); // coefficient on g_v
            ov_b = i / (u * u); // constant part
        }
        OverlapForm::Dice => {
            let s = sum_p + sum_g + eps;
            let i2 = 2.0 * sum_pg + eps;
            ov_a = -2.0 / s;
            ov_b = i2 / (s * s);
        }
    }
    let m_in = (denom_p - sum_pm_m) / (denom_p * denom_p);
    let m_out = -sum_pm_m / (denom_p * denom_p);
    let b_in = (denom_p - sum_pm_b) / (denom_p * denom_p);
    let b_out = -sum_pm_b / (denom_p * denom_p);

    mfs_core::par::for_each_chunk_mut(&mut grad.data, 1 << 14, |ci, chunk| {
        let base = ci << 14;
        for (j, gv) in chunk.iter_mut().enumerate() {
            let idx = base + j;
            let mut g = ov_b;
            if gt[idx] {
                g += ov_a;
            }
            if weights.w_m > 0.0 {
                g += weights.w_m * if muscle[idx] { m_in } else { m_out };
            }
            if weights.w_b > 0.0 {
                g += weights.w_b * if bone[idx] { b_in } else { b_out };
            }
            *gv = F::from_f64_lossy(g);
        }
    });

    Ok((
        LossBreakdown {
            total,
            overlap: l_overlap,
            muscle: l_muscle,
            bone: l_bone,
        },
        grad,
    ))
}
