//! Dense 5-axis tensors `(batch, channel, depth, height, width)`.

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Element type for all differentiable code: f32 in training mode,
/// f64 in gradient-check mode.
pub trait Element:
    Float
    + FromPrimitive
    + ToPrimitive
    + std::ops::AddAssign
    + std::ops::SubAssign
    + std::ops::MulAssign
    + std::iter::Sum
    + std::fmt::Debug
    + std::fmt::Display
    + Default
    + Send
    + Sync
    + 'static
{
    fn from_f64_lossy(v: f64) -> Self;
    fn to_f64_lossy(self) -> f64;
}

impl Element for f32 {
    #[inline]
    fn from_f64_lossy(v: f64) -> Self {
        v as f32
    }
    #[inline]
    fn to_f64_lossy(self) -> f64 {
        self as f64
    }
}

impl Element for f64 {
    #[inline]
    fn from_f64_lossy(v: f64) -> Self {
        v
    }
    #[inline]
    fn to_f64_lossy(self) -> f64 {
        self
    }
}

/// Dense tensor with shape `(n, c, d, h, w)`, row-major (w fastest).
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<F> {
    pub shape: [usize; 5],
    pub data: Vec<F>,
}

impl<F: Element> Tensor<F> {
    pub fn zeros(shape: [usize; 5]) -> Self {
        let numel: usize = shape.iter().product();
        Self {
            shape,
            data: vec![F::zero(); numel],
        }
    }

    pub fn from_vec(shape: [usize; 5], data: Vec<F>) -> Self {
        assert_eq!(
            data.len(),
            shape.iter().product::<usize>(),
            "tensor data length does not match shape {shape:?}"
        );
        Self { shape, data }
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.shape[0]
    }
    #[inline]
    pub fn c(&self) -> usize {
        self.shape[1]
    }
    #[inline]
    pub fn d(&self) -> usize {
        self.shape[2]
    }
    #[inline]
    pub fn h(&self) -> usize {
        self.shape[3]
    }
    #[inline]
    pub fn w(&self) -> usize {
        self.shape[4]
    }

    /// Voxels per channel: d*h*w.
    #[inline]
    pub fn spatial(&self) -> usize {
        self.shape[2] * self.shape[3] * self.shape[4]
    }

    #[inline]
    pub fn numel(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn index(&self, n: usize, c: usize, z: usize, y: usize, x: usize) -> usize {
        ((((n * self.shape[1]) + c) * self.shape[2] + z) * self.shape[3] + y) * self.shape[4] + x
    }

    #[inline]
    pub fn at(&self, n: usize, c: usize, z: usize, y: usize, x: usize) -> F {
        self.data[self.index(n, c, z, y, x)]
    }

    /// Contiguous spatial slice of one `(n, c)` channel.
    #[inline]
    pub fn channel(&self, n: usize, c: usize) -> &[F] {
        let s = self.spatial();
        let off = (n * self.shape[1] + c) * s;
        &self.data[off..off + s]
    }

    #[inline]
    pub fn channel_mut(&mut self, n: usize, c: usize) -> &mut [F] {
        let s = self.spatial();
        let off = (n * self.shape[1] + c) * s;
        &mut self.data[off..off + s]
    }

    pub fn map<G: Element>(&self, f: impl Fn(F) -> G) -> Tensor<G> {
        Tensor {
            shape: self.shape,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn to_f64(&self) -> Tensor<f64> {
        self.map(|v| v.to_f64_lossy())
    }

    pub fn max_abs_diff(&self, other: &Tensor<F>) -> f64 {
        assert_eq!(self.shape, other.shape);
        self.data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| (a.to_f64_lossy() - b.to_f64_lossy()).abs())
            .fold(0.0, f64::max)
    }
}

/// Elementwise sum of two tensors of identical shape.
pub fn add<F: Element>(a: &Tensor<F>, b: &Tensor<F>) -> Tensor<F> {
    assert_eq!(a.shape, b.shape, "add: shape mismatch");
    let data = a.data.iter().zip(&b.data).map(|(&x, &y)| x + y).collect();
    Tensor {
        shape: a.shape,
        data,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn indexing_is_row_major_w_fastest() {
        let t = Tensor::<f32>::zeros([2, 3, 4, 5, 6]);
        assert_eq!(t.index(0, 0, 0, 0, 1), 1);
        assert_eq!(t.index(0, 0, 0, 1, 0), 6);
        assert_eq!(t.index(0, 0, 1, 0, 0), 30);
        assert_eq!(t.index(0, 1, 0, 0, 0), 120);
        assert_eq!(t.index(1, 0, 0, 0, 0), 360);
        assert_eq!(t.numel(), 720);
    }

    #[test]
    fn channel_slices_are_contiguous() {
        let mut t = Tensor::<f32>::zeros([2, 2, 2, 2, 2]);
        let i = t.index(1, 1, 1, 1, 1);
        t.data[i] = 5.0;
        let ch = t.channel(1, 1);
        assert_eq!(ch.len(), 8);
        assert_eq!(ch[7], 5.0);
    }
}
