//! Adam optimizer over a [`ParamStore`], iterating parameters in
//! registration order so updates are deterministic.

use crate::params::{GradStore, ParamStore};
use crate::tensor::Element;

#[derive(Debug, Clone)]
pub struct Adam<F> {
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: u64,
    m: Vec<Vec<F>>,
    v: Vec<Vec<F>>,
}

impl<F: Element> Adam<F> {
    pub fn new(params: &ParamStore<F>) -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: (0..params.len())
                .map(|id| vec![F::zero(); params.data(id).len()])
                .collect(),
            v: (0..params.len())
                .map(|id| vec![F::zero(); params.data(id).len()])
                .collect(),
        }
    }

    pub fn step(&mut self, params: &mut ParamStore<F>, grads: &GradStore<F>, lr: f64) {
        self.t += 1;
        let b1 = F::from_f64_lossy(self.beta1);
        let b2 = F::from_f64_lossy(self.beta2);
        let one = F::one();
        let bc1 = F::from_f64_lossy(1.0 - self.beta1.powi(self.t as i32));
        let bc2 = F::from_f64_lossy(1.0 - self.beta2.powi(self.t as i32));
        let lr = F::from_f64_lossy(lr);
        let eps = F::from_f64_lossy(self.eps);

        for id in 0..self.m.len() {
            let g = grads.get(id);
            let m = &mut self.m[id];
            let v = &mut self.v[id];
            let p = params.data_mut(id);
            for i in 0..p.len() {
                m[i] = b1 * m[i] + (one - b1) * g[i];
                v[i] = b2 * v[i] + (one - b2) * g[i] * g[i];
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                p[i] = p[i] - lr * mhat / (vhat.sqrt() + eps);
            }
        }
    }
}

/// lr(epoch) = lr0 * decay^epoch.
pub fn lr_schedule(lr0: f64, decay: f64, epoch: usize) -> f64 {
    lr0 * decay.powi(epoch as i32)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn adam_descends_a_quadratic() {
        // Minimize f(p) = (p - 3)^2 elementwise.
        let mut ps = ParamStore::<f64>::new();
        ps.add_constant("p", vec![4], 0.0);
        let mut opt = Adam::new(&ps);
        for _ in 0..500 {
            let mut grads = GradStore::zeros_like(&ps);
            {
                let p = ps.data(0).to_vec();
                let g = grads.get_mut(0);
                for i in 0..4 {
                    g[i] = 2.0 * (p[i] - 3.0);
                }
            }
            opt.step(&mut ps, &grads, 0.05);
        }
        for &v in ps.data(0) {
            assert!((v - 3.0).abs() < 1e-2, "{v}");
        }
    }

    #[test]
    fn schedule_is_strictly_decreasing_for_decay_below_one() {
        let mut prev = f64::INFINITY;
        for e in 0..10 {
            let lr = lr_schedule(0.001, 0.97, e);
            assert!(lr < prev);
            prev = lr;
        }
        assert!((lr_schedule(0.001, 0.97, 0) - 0.001).abs() < 1e-15);
        assert!((lr_schedule(0.001, 0.97, 2) - 0.001 * 0.97 * 0.97).abs() < 1e-15);
    }

    #[test]
    fn identical_runs_give_identical_parameters() {
        let run = || {
            let mut ps = ParamStore::<f32>::new();
            ps.add_uniform("p", vec![8], 1.0, 3);
            let mut opt = Adam::new(&ps);
            for step in 0..20 {
                let mut grads = GradStore::zeros_like(&ps);
                {
                    let p = ps.data(0).to_vec();
                    let g = grads.get_mut(0);
                    for i in 0..8 {
                        g[i] = p[i] * (step as f32 * 0.1 + 0.5);
                    }
                }
                opt.step(&mut ps, &grads, 0.01);
            }
            ps.data(0).to_vec()
        };
        let a = run();
        let b = run();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
    }
}
