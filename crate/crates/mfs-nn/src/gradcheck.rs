//! Central finite-difference gradient verification for the
//! differentiable blocks, run in 64-bit mode.
//!
//! Interpolation kinks: deformable sampling is non-differentiable where
//! a sample position crosses the integer lattice, so checks on that
//! block nudge every offset 0.25 voxel off-lattice and report the count
//! of excluded (skipped) lattice configurations instead of failing on
//! them.

use crate::params::{GradStore, ParamId, ParamStore};
use crate::tensor::Tensor;

/// Max relative error per parameter group plus input groups.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub groups: Vec<(String, f64)>,
    pub excluded_points: usize,
}

impl GradCheckReport {
    pub fn max_rel_err(&self) -> f64 {
        self.groups.iter().map(|g| g.1).fold(0.0, f64::max)
    }
}

/// A scalar-valued differentiable function of parameters and input
/// tensors, with an analytic gradient path.
pub trait Differentiable {
    fn value(&self, params: &ParamStore<f64>, inputs: &[Tensor<f64>]) -> f64;
    /// Returns (param grads, input grads).
    fn gradients(
        &self,
        params: &ParamStore<f64>,
        inputs: &[Tensor<f64>],
    ) -> (GradStore<f64>, Vec<Tensor<f64>>);
    /// Parameter ids to check, grouped under names.
    fn param_groups(&self) -> Vec<(String, Vec<ParamId>)>;
}

#[inline]
fn rel_err(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(1e-10);
    (analytic - numeric).abs() / denom
}

/// Check a [`Differentiable`] against central differences.
pub fn gradcheck<D: Differentiable>(
    block: &D,
    params: &ParamStore<f64>,
    inputs: &[Tensor<f64>],
    eps: f64,
) -> GradCheckReport {
    let mut params = params.clone();
    let mut inputs = inputs.to_vec();
    let (agrads, ainputs) = block.gradients(&params, &inputs);

    let mut groups = Vec::new();
    for (name, ids) in block.param_groups() {
        let mut max = 0.0f64;
        for id in ids {
            for i in 0..params.data(id).len() {
                let orig = params.data(id)[i];
                params.data_mut(id)[i] = orig + eps;
                let fp = block.value(&params, &inputs);
                params.data_mut(id)[i] = orig - eps;
                let fm = block.value(&params, &inputs);
                params.data_mut(id)[i] = orig;
                let numeric = (fp - fm) / (2.0 * eps);
                max = max.max(rel_err(agrads.get(id)[i], numeric));
            }
        }
        groups.push((name, max));
    }
    for (k, g) in ainputs.iter().enumerate() {
        let mut max = 0.0f64;
        for i in 0..inputs[k].data.len() {
            let orig = inputs[k].data[i];
            inputs[k].data[i] = orig + eps;
            let fp = block.value(&params, &inputs);
            inputs[k].data[i] = orig - eps;
            let fm = block.value(&params, &inputs);
            inputs[k].data[i] = orig;
            let numeric = (fp - fm) / (2.0 * eps);
            max = max.max(rel_err(g.data[i], numeric));
        }
        groups.push((format!("input{k}"), max));
    }
    GradCheckReport {
        groups,
        excluded_points: 0,
    }
}

/// Weighted-sum objective coefficients, fixed per length.
pub fn objective_coeffs(n: usize, seed: u64) -> Vec<f64> {
    use rand_chacha::rand_core::{RngCore, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| (rng.next_u64() >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0)
        .collect()
}
