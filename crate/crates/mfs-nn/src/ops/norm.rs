//! Instance normalization with affine scale/shift, per (sample, channel)
//! over the spatial axes.

use mfs_core::par::{for_each_chunk_mut, map_indexed};

use super::reduce::sum8;
use crate::tensor::{Element, Tensor};

pub const NORM_EPS: f64 = 1e-5;

/// Per-channel statistics saved for the backward pass.
#[derive(Debug, Clone)]
pub struct InstanceNormCtx<F> {
    pub mean: Vec<F>,
    pub inv_std: Vec<F>,
}

pub fn instance_norm_forward<F: Element>(
    x: &Tensor<F>,
    gamma: &[F],
    beta: &[F],
) -> (Tensor<F>, InstanceNormCtx<F>) {
    let [n, c, _, _, _] = x.shape;
    assert_eq!(gamma.len(), c);
    assert_eq!(beta.len(), c);
    let sp = x.spatial();
    let spf = F::from_f64_lossy(sp as f64);
    let eps = F::from_f64_lossy(NORM_EPS);

    let stats: Vec<(F, F)> = map_indexed(n * c, |i| {
        let ch = x.channel(i / c, i % c);
        let mean = sum8(ch) / spf;
        let mut var = F::zero();
        // Two-pass variance keeps f32 mode accurate.
        let mut acc = [F::zero(); 8];
        let mut it = ch.chunks_exact(8);
        for chunk in &mut it {
            for j in 0..8 {
                let d = chunk[j] - mean;
                acc[j] += d * d;
            }
        }
        for (j, &v) in it.remainder().iter().enumerate() {
            let d = v - mean;
            acc[j] += d * d;
        }
        for a in acc {
            var += a;
        }
        var = var / spf;
        (mean, F::one() / (var + eps).sqrt())
    });

    let mut out = Tensor::zeros(x.shape);
    for_each_chunk_mut(&mut out.data, sp, |i, dst| {
        let (mean, istd) = stats[i];
        let g = gamma[i % c];
        let b = beta[i % c];
        let src = x.channel(i / c, i % c);
        for (d, &s) in dst.iter_mut().zip(src) {
            *d = g * (s - mean) * istd + b;
        }
    });
    let ctx = InstanceNormCtx {
        mean: stats.iter().map(|s| s.0).collect(),
        inv_std: stats.iter().map(|s| s.1).collect(),
    };
    (out, ctx)
}

pub fn instance_norm_backward<F: Element>(
    x: &Tensor<F>,
    gamma: &[F],
    ctx: &InstanceNormCtx<F>,
    gout: &Tensor<F>,
    dgamma: &mut [F],
    dbeta: &mut [F],
) -> Tensor<F> {
    let [n, c, _, _, _] = x.shape;
    let sp = x.spatial();
    let spf = F::from_f64_lossy(sp as f64);

    // Per-channel reductions: sum(gy) and sum(gy * xhat).
    let sums: Vec<(F, F)> = map_indexed(n * c, |i| {
        let xc = x.channel(i / c, i % c);
        let gc = gout.channel(i / c, i % c);
        let mean = ctx.mean[i];
        let istd = ctx.inv_std[i];
        let mut s = [F::zero(); 8];
        let mut sx = [F::zero(); 8];
        let mut ix = xc.chunks_exact(8);
        let mut ig = gc.chunks_exact(8);
        for (cx, cg) in (&mut ix).zip(&mut ig) {
            for j in 0..8 {
                let xhat = (cx[j] - mean) * istd;
                s[j] += cg[j];
                sx[j] += cg[j] * xhat;
            }
        }
        for (j, (&xv, &gv)) in ix.remainder().iter().zip(ig.remainder()).enumerate() {
            let xhat = (xv - mean) * istd;
            s[j] += gv;
            sx[j] += gv * xhat;
        }
        let fold = |a: [F; 8]| ((a[0] + a[4]) + (a[2] + a[6])) + ((a[1] + a[5]) + (a[3] + a[7]));
        (fold(s), fold(sx))
    });

    for ci in 0..c {
        let mut dg = F::zero();
        let mut db = F::zero();
        for nn in 0..n {
            let (s, sx) = sums[nn * c + ci];
            db += s;
            dg += sx;
        }
        dgamma[ci] += dg;
        dbeta[ci] += db;
    }

    let mut dx = Tensor::zeros(x.shape);
    for_each_chunk_mut(&mut dx.data, sp, |i, dst| {
        let mean = ctx.mean[i];
        let istd = ctx.inv_std[i];
        let g = gamma[i % c];
        let (sum_gy, sum_gyx) = sums[i];
        let m1 = sum_gy / spf;
        let m2 = sum_gyx / spf;
        let xc = x.channel(i / c, i % c);
        let gc = gout.channel(i / c, i % c);
        for ((d, &xv), &gv) in dst.iter_mut().zip(xc).zip(gc) {
            let xhat = (xv - mean) * istd;
            *d = g * istd * (gv - m1 - xhat * m2);
        }
    });
    dx
}
