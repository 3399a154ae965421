//! Fixed-structure reductions.
//!
//! Plain sequential float summation defeats vectorization (the adds form
//! a dependency chain), so these accumulate into eight independent lanes
//! and combine them in a fixed tree. The lane layout depends only on
//! element position, which keeps results bit-deterministic.

use crate::tensor::Element;

#[inline]
pub fn sum8<F: Element>(xs: &[F]) -> F {
    let mut acc = [F::zero(); 8];
    let mut it = xs.chunks_exact(8);
    for ch in &mut it {
        for j in 0..8 {
            acc[j] += ch[j];
        }
    }
    for (j, &v) in it.remainder().iter().enumerate() {
        acc[j] += v;
    }
    combine8(acc)
}

#[inline]
pub fn dot8<F: Element>(a: &[F], b: &[F]) -> F {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [F::zero(); 8];
    let mut ia = a.chunks_exact(8);
    let mut ib = b.chunks_exact(8);
    for (ca, cb) in (&mut ia).zip(&mut ib) {
        for j in 0..8 {
            acc[j] += ca[j] * cb[j];
        }
    }
    for (j, (&x, &y)) in ia.remainder().iter().zip(ib.remainder()).enumerate() {
        acc[j] += x * y;
    }
    combine8(acc)
}

/// Dot product of `a[x]` with `b[x + shift]` over the valid overlap.
#[inline]
pub fn dot_shifted8<F: Element>(a: &[F], b: &[F], shift: isize) -> F {
    if shift >= 0 {
        let s = shift as usize;
        if s >= b.len() {
            return F::zero();
        }
        let n = a.len().min(b.len() - s);
        dot8(&a[..n], &b[s..s + n])
    } else {
        let s = (-shift) as usize;
        if s >= a.len() {
            return F::zero();
        }
        let n = (a.len() - s).min(b.len());
        dot8(&a[s..s + n], &b[..n])
    }
}

/// Three shifted dots in one pass: `(sum a[x]*b[x-1+t])` for t = 0, 1, 2,
/// i.e. the weight-gradient taps of a 3-wide stencil. Equivalent to
/// `dot_shifted8(a, b, -1 + t)` for each t.
#[inline]
pub fn dot3_shifted8<F: Element>(a: &[F], b: &[F]) -> [F; 3] {
    debug_assert_eq!(a.len(), b.len());
    let n = a.len();
    if n < 2 {
        let d1 = if n == 1 { a[0] * b[0] } else { F::zero() };
        return [F::zero(), d1, F::zero()];
    }
    // t=1 interior pairs vectorize; the shifted variants reuse loads.
    let mut acc0 = [F::zero(); 8];
    let mut acc1 = [F::zero(); 8];
    let mut acc2 = [F::zero(); 8];
    let a_mid = &a[1..n - 1];
    let b0 = &b[..n - 2];
    let b1 = &b[1..n - 1];
    let b2 = &b[2..];
    let mut i = 0usize;
    let m = a_mid.len();
    while i + 8 <= m {
        for j in 0..8 {
            let av = a_mid[i + j];
            acc0[j] += av * b0[i + j];
            acc1[j] += av * b1[i + j];
            acc2[j] += av * b2[i + j];
        }
        i += 8;
    }
    let mut j = 0usize;
    while i < m {
        let av = a_mid[i];
        acc0[j] += av * b0[i];
        acc1[j] += av * b1[i];
        acc2[j] += av * b2[i];
        i += 1;
        j += 1;
    }
    let mut out = [combine8(acc0), combine8(acc1), combine8(acc2)];
    // Row-end terms outside the interior window.
    out[1] += a[0] * b[0] + a[n - 1] * b[n - 1];
    out[0] += a[n - 1] * b[n - 2];
    out[2] += a[0] * b[1];
    out
}

#[inline]
fn combine8<F: Element>(acc: [F; 8]) -> F {
    let a = (acc[0] + acc[4]) + (acc[2] + acc[6]);
    let b = (acc[1] + acc[5]) + (acc[3] + acc[7]);
    a + b
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_matches_exact_on_integers() {
        let xs: Vec<f64> = (1..=1000).map(|i| i as f64).collect();
        assert_eq!(sum8(&xs), 500500.0);
        let xs: Vec<f32> = (1..=13).map(|i| i as f32).collect();
        assert_eq!(sum8(&xs), 91.0);
    }

    #[test]
    fn dot_matches_reference() {
        let a: Vec<f64> = (0..37).map(|i| (i as f64) * 0.5).collect();
        let b: Vec<f64> = (0..37).map(|i| (i as f64) - 18.0).collect();
        let expect: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
        assert!((dot8(&a, &b) - expect).abs() < 1e-9);
    }

    #[test]
    fn shifted_dot_windows() {
        let a = vec![1.0f64, 2.0, 3.0];
        let b = vec![10.0f64, 20.0, 30.0];
        // shift +1: a[0]*b[1] + a[1]*b[2]
        assert_eq!(dot_shifted8(&a, &b, 1), 80.0);
        // shift -1: a[1]*b[0] + a[2]*b[1]
        assert_eq!(dot_shifted8(&a, &b, -1), 80.0);
        assert_eq!(dot_shifted8(&a, &b, 0), 140.0);
        assert_eq!(dot_shifted8(&a, &b, 3), 0.0);
        assert_eq!(dot_shifted8(&a, &b, -3), 0.0);
    }
}
