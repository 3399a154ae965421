//! Flat parameter and gradient storage.
//!
//! Parameters are registered in build order under stable slash-paths
//! (e.g. `enc_ct.l1.conv1.weight`); optimizers and checkpoints iterate
//! them in that order, which keeps updates deterministic.

use std::collections::HashMap;

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::tensor::Element;
use mfs_core::seeds;

pub type ParamId = usize;

#[derive(Debug, Clone)]
pub struct ParamTensor<F> {
    pub shape: Vec<usize>,
    pub data: Vec<F>,
}

#[derive(Debug, Clone)]
pub struct ParamStore<F> {
    names: Vec<String>,
    tensors: Vec<ParamTensor<F>>,
    by_name: HashMap<String, ParamId>,
}

impl<F: Element> Default for ParamStore<F> {
    fn default() -> Self {
        Self::new()
    }
}

impl<F: Element> ParamStore<F> {
    pub fn new() -> Self {
        Self {
            names: Vec::new(),
            tensors: Vec::new(),
            by_name: HashMap::new(),
        }
    }

    pub fn add(&mut self, name: &str, shape: Vec<usize>, data: Vec<F>) -> ParamId {
        assert_eq!(data.len(), shape.iter().product::<usize>());
        assert!(
            !self.by_name.contains_key(name),
            "duplicate parameter {name}"
        );
        let id = self.tensors.len();
        self.names.push(name.to_string());
        self.by_name.insert(name.to_string(), id);
        self.tensors.push(ParamTensor { shape, data });
        id
    }

    /// Register a parameter initialized uniformly in `[-bound, bound]`.
    ///
    /// Each parameter draws from its own stream keyed by (seed, name),
    /// so initialization does not depend on registration order.
    pub fn add_uniform(&mut self, name: &str, shape: Vec<usize>, bound: f64, seed: u64) -> ParamId {
        let n: usize = shape.iter().product();
        let mut rng = ChaCha8Rng::seed_from_u64(seeds::derive(seed, name, 0));
        let data = (0..n)
            .map(|_| {
                let u = (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64);
                F::from_f64_lossy(-bound + 2.0 * bound * u)
            })
            .collect();
        self.add(name, shape, data)
    }

    pub fn add_constant(&mut self, name: &str, shape: Vec<usize>, value: f64) -> ParamId {
        let n: usize = shape.iter().product();
        self.add(name, shape, vec![F::from_f64_lossy(value); n])
    }

    #[inline]
    pub fn get(&self, id: ParamId) -> &ParamTensor<F> {
        &self.tensors[id]
    }

    #[inline]
    pub fn data(&self, id: ParamId) -> &[F] {
        &self.tensors[id].data
    }

    pub fn data_mut(&mut self, id: ParamId) -> &mut [F] {
        &mut self.tensors[id].data
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id]
    }

    pub fn id_of(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied()
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Total scalar parameter count.
    pub fn total_scalars(&self) -> usize {
        self.tensors.iter().map(|t| t.data.len()).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &ParamTensor<F>)> {
        self.names
            .iter()
            .map(|s| s.as_str())
            .zip(self.tensors.iter())
    }

    pub fn to_f64(&self) -> ParamStore<f64> {
        ParamStore {
            names: self.names.clone(),
            tensors: self
                .tensors
                .iter()
                .map(|t| ParamTensor {
                    shape: t.shape.clone(),
                    data: t.data.iter().map(|v| v.to_f64_lossy()).collect(),
                })
                .collect(),
            by_name: self.by_name.clone(),
        }
    }
}

/// Gradient accumulator aligned with a [`ParamStore`].
#[derive(Debug, Clone)]
pub struct GradStore<F> {
    grads: Vec<Vec<F>>,
}

impl<F: Element> GradStore<F> {
    pub fn zeros_like(params: &ParamStore<F>) -> Self {
        Self {
            grads: params.tensors.iter().map(|t| vec![F::zero(); t.data.len()]).collect(),
        }
    }

    #[inline]
    pub fn get(&self, id: ParamId) -> &[F] {
        &self.grads[id]
    }

    #[inline]
    pub fn get_mut(&mut self, id: ParamId) -> &mut [F] {
        &mut self.grads[id]
    }

    /// Mutable access to two distinct gradient slices at once.
    pub fn get2_mut(&mut self, a: ParamId, b: ParamId) -> (&mut [F], &mut [F]) {
        assert_ne!(a, b);
        let [ga, gb] = self
            .grads
            .get_disjoint_mut([a, b])
            .expect("distinct in-range ids");
        (ga.as_mut_slice(), gb.as_mut_slice())
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    /// Accumulate `other * scale` into self.
    pub fn add_scaled(&mut self, other: &GradStore<F>, scale: F) {
        assert_eq!(self.grads.len(), other.grads.len());
        for (dst, src) in self.grads.iter_mut().zip(&other.grads) {
            for (d, s) in dst.iter_mut().zip(src) {
                *d += *s * scale;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_is_order_independent() {
        let mut a = ParamStore::<f32>::new();
        a.add_uniform("w1", vec![4], 1.0, 7);
        a.add_uniform("w2", vec![4], 1.0, 7);
        let mut b = ParamStore::<f32>::new();
        b.add_uniform("w2", vec![4], 1.0, 7);
        b.add_uniform("w1", vec![4], 1.0, 7);
        assert_eq!(a.data(a.id_of("w1").unwrap()), b.data(b.id_of("w1").unwrap()));
        assert_eq!(a.data(a.id_of("w2").unwrap()), b.data(b.id_of("w2").unwrap()));
    }

    #[test]
    fn same_seed_same_init() {
        let mut a = ParamStore::<f32>::new();
        let mut b = ParamStore::<f32>::new();
        a.add_uniform("w", vec![16], 0.5, 3);
        b.add_uniform("w", vec![16], 0.5, 3);
        assert_eq!(a.data(0), b.data(0));
        let mut c = ParamStore::<f32>::new();
        c.add_uniform("w", vec![16], 0.5, 4);
        assert_ne!(a.data(0), c.data(0));
    }

    #[test]
    fn uniform_bound_is_respected() {
        let mut s = ParamStore::<f32>::new();
        s.add_uniform("w", vec![1000], 0.25, 11);
        assert!(s.data(0).iter().all(|v| v.abs() <= 0.25));
    }
}
