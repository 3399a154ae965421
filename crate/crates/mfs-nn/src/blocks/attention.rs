//! Modality attention: the MRI feature map is passed through a
//! deformable convolution, summed with the CT features, globally
//! average-pooled, and softmaxed over channels; the resulting weights
//! gate both streams, whose sum feeds the decoder.
//!
//! The softmax weights sum to 1 per batch element, which shrinks
//! magnitudes as the channel count grows; `scale_by_channels` optionally
//! multiplies the weights by C for experiments. An optional FC
//! bottleneck between pooling and softmax is available behind
//! `fc_gate` (off by default; the gating path is otherwise FC-free).

use mfs_core::par::for_each_chunk_mut;

use crate::ops::{
    channel_softmax, channel_softmax_backward, dot8, gap_forward, ChanVec,
};
use crate::params::{GradStore, ParamId, ParamStore};
use crate::tensor::{add, Element, Tensor};

use super::deform::{DeformConv3d, DeformCtx};

#[derive(Debug, Clone)]
pub struct ModalityAttention {
    pub c: usize,
    pub defconv: DeformConv3d,
    pub fc: Option<FcGate>,
    pub scale_by_channels: bool,
}

#[derive(Debug, Clone)]
pub struct FcGate {
    pub r: usize,
    pub fc1_w: ParamId,
    pub fc1_b: ParamId,
    pub fc2_w: ParamId,
    pub fc2_b: ParamId,
}

#[derive(Debug, Clone)]
pub struct ModalityAttentionCtx<F> {
    pub def_ctx: DeformCtx<F>,
    /// Z_CT + DefCon(Z_MRI); the gated sum rescales this tensor.
    pub fused: Tensor<F>,
    /// Softmax weights per (n, c).
    pub weights: ChanVec<F>,
    /// Pre-softmax pooled vector (after the FC gate when enabled).
    pub pooled: ChanVec<F>,
    pub fc_hidden: Option<ChanVec<F>>,
}

impl ModalityAttention {
    pub fn build<F: Element>(
        ps: &mut ParamStore<F>,
        prefix: &str,
        c: usize,
        off_k: usize,
        fc_gate: bool,
        fc_reduction: usize,
        scale_by_channels: bool,
        seed: u64,
    ) -> Self {
        let defconv = DeformConv3d::build(ps, &format!("{prefix}.def"), c, c, off_k, seed);
        let fc = if fc_gate {
            let r = fc_reduction;
            assert!(c % r == 0, "FC gate requires channels divisible by reduction");
            let b1 = (6.0 / c as f64).sqrt();
            let b2 = (6.0 / (c / r) as f64).sqrt();
            Some(FcGate {
                r,
                fc1_w: ps.add_uniform(&format!("{prefix}.fc1.weight"), vec![c / r, c], b1, seed),
                fc1_b: ps.add_constant(&format!("{prefix}.fc1.bias"), vec![c / r], 0.0),
                fc2_w: ps.add_uniform(&format!("{prefix}.fc2.weight"), vec![c, c / r], b2, seed),
                fc2_b: ps.add_constant(&format!("{prefix}.fc2.bias"), vec![c], 0.0),
            })
        } else {
            None
        };
        Self {
            c,
            defconv,
            fc,
            scale_by_channels,
        }
    }

    pub fn forward<F: Element>(
        &self,
        ps: &ParamStore<F>,
        z_mri: &Tensor<F>,
        z_ct: &Tensor<F>,
    ) -> (Tensor<F>, ModalityAttentionCtx<F>) {
        assert_eq!(z_mri.shape, z_ct.shape, "modality attention shape mismatch");
        assert_eq!(z_mri.c(), self.c, "modality attention channel mismatch");
        let (z_tran, def_ctx) = self.defconv.forward(ps, z_mri);
        let fused = add(z_ct, &z_tran);
        drop(z_tran);
        let gp = gap_forward(&fused);

        let (pooled, fc_hidden) = match &self.fc {
            None => (gp, None),
            Some(fc) => {
                let (n, c) = (gp.n, gp.c);
                let cr = c / fc.r;
                let w1 = ps.data(fc.fc1_w);
                let b1 = ps.data(fc.fc1_b);
                let w2 = ps.data(fc.fc2_w);
                let b2 = ps.data(fc.fc2_b);
                let mut hidden = ChanVec::zeros(n, cr);
                for nn in 0..n {
                    for j in 0..cr {
                        let mut acc = b1[j];
                        acc += dot8(&w1[j * c..(j + 1) * c], gp.row(nn));
                        hidden.row_mut(nn)[j] = if acc > F::zero() { acc } else { F::zero() };
                    }
                }
                let mut pre = ChanVec::zeros(n, c);
                for nn in 0..n {
                    for ci in 0..c {
                        let mut acc = b2[ci];
                        acc += dot8(&w2[ci * cr..(ci + 1) * cr], hidden.row(nn));
                        pre.row_mut(nn)[ci] = acc;
                    }
                }
                (pre, Some(hidden))
            }
        };

        let mut weights = channel_softmax(&pooled);
        if self.scale_by_channels {
            let cf = F::from_f64_lossy(self.c as f64);
            for v in weights.data.iter_mut() {
                *v = *v * cf;
            }
        }

        let sp = fused.spatial();
        let c = self.c;
        let mut out = Tensor::zeros(fused.shape);
        for_each_chunk_mut(&mut out.data, sp, |i, dst| {
            let a = weights.data[i];
            let src = fused.channel(i / c, i % c);
            for (d, &s) in dst.iter_mut().zip(src) {
                *d = a * s;
            }
        });

        (
            out,
            ModalityAttentionCtx {
                def_ctx,
                fused,
                weights,
                pooled,
                fc_hidden,
            },
        )
    }

    /// Returns `(d_z_mri, d_z_ct)`.
    pub fn backward<F: Element>(
        &self,
        ps: &ParamStore<F>,
        z_mri: &Tensor<F>,
        ctx: &ModalityAttentionCtx<F>,
        gout: &Tensor<F>,
        grads: &mut GradStore<F>,
    ) -> (Tensor<F>, Tensor<F>) {
        let c = self.c;
        let n = gout.n();
        let sp = gout.spatial();
        let spf = F::from_f64_lossy(sp as f64);

        // d(weights)[n,c] = <gout, fused> per channel.
        let mut da = ChanVec::zeros(n, c);
        for nn in 0..n {
            for ci in 0..c {
                da.row_mut(nn)[ci] = dot8(gout.channel(nn, ci), ctx.fused.channel(nn, ci));
            }
        }
        // Softmax output actually used may carry the C scale.
        let mut soft = ctx.weights.clone();
        if self.scale_by_channels {
            let cf = F::from_f64_lossy(c as f64);
            for v in da.data.iter_mut() {
                *v = *v * cf;
            }
            for v in soft.data.iter_mut() {
                *v = *v / cf;
            }
        }
        let dpre = channel_softmax_backward(&soft, &da);

        // Through the optional FC gate back to the pooled vector.
        let dgp = match (&self.fc, &ctx.fc_hidden) {
            (None, _) => dpre,
            (Some(fc), Some(hidden)) => {
                let cr = c / fc.r;
                let w1 = ps.data(fc.fc1_w);
                let w2 = ps.data(fc.fc2_w);
                let mut dh = ChanVec::zeros(n, cr);
                {
                    let (dw2, db2) = grads.get2_mut(fc.fc2_w, fc.fc2_b);
                    for nn in 0..n {
                        let d = dpre.row(nn);
                        let hrow = hidden.row(nn);
                        for ci in 0..c {
                            db2[ci] += d[ci];
                            for j in 0..cr {
                                dw2[ci * cr + j] += d[ci] * hrow[j];
                            }
                        }
                    }
                }
                for nn in 0..n {
                    let d = dpre.row(nn);
                    let hrow = hidden.row(nn);
                    for j in 0..cr {
                        if hrow[j] > F::zero() {
                            let mut acc = F::zero();
                            for ci in 0..c {
                                acc += d[ci] * w2[ci * cr + j];
                            }
                            dh.row_mut(nn)[j] = acc;
                        }
                    }
                }
                // Recompute gp (= gap of fused) for the fc1 weight grad.
                let gp = gap_forward(&ctx.fused);
                let mut dgp = ChanVec::zeros(n, c);
                {
                    let (dw1, db1) = grads.get2_mut(fc.fc1_w, fc.fc1_b);
                    for nn in 0..n {
                        let d = dh.row(nn);
                        for j in 0..cr {
                            db1[j] += d[j];
                            for ci in 0..c {
                                dw1[j * c + ci] += d[j] * gp.row(nn)[ci];
                            }
                        }
                    }
                }
                for nn in 0..n {
                    let d = dh.row(nn);
                    let dst = dgp.row_mut(nn);
                    for ci in 0..c {
                        let mut acc = F::zero();
                        for j in 0..cr {
                            acc += d[j] * w1[j * c + ci];
                        }
                        dst[ci] = acc;
                    }
                }
                dgp
            }
            _ => unreachable!("fc gate enabled but hidden missing"),
        };

        // d(fused) = weights * gout + broadcast(dgp)/spatial.
        let mut dfused = Tensor::zeros(gout.shape);
        for_each_chunk_mut(&mut dfused.data, sp, |i, dst| {
            let a = ctx.weights.data[i];
            let addv = dgp.data[i] / spf;
            let src = gout.channel(i / c, i % c);
            for (d, &gv) in dst.iter_mut().zip(src) {
                *d = a * gv + addv;
            }
        });

        let d_mri = self
            .defconv
            .backward(ps, z_mri, &ctx.def_ctx, &dfused, grads);
        (d_mri, dfused)
    }
}
