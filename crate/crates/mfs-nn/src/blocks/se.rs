//! 3D squeeze-and-excite: global average pool, two affine maps with a
//! ReLU bottleneck, sigmoid gate, per-channel rescale.

use mfs_core::par::for_each_chunk_mut;

use crate::ops::{dot8, gap_forward, ChanVec};
use crate::params::{GradStore, ParamId, ParamStore};
use crate::tensor::{Element, Tensor};

#[derive(Debug, Clone)]
pub struct SeBlock {
    pub c: usize,
    pub r: usize,
    pub fc1_w: ParamId, // [c/r, c]
    pub fc1_b: ParamId, // [c/r]
    pub fc2_w: ParamId, // [c, c/r]
    pub fc2_b: ParamId, // [c]
}

#[derive(Debug, Clone)]
pub struct SeCtx<F> {
    pub squeeze: ChanVec<F>,
    pub hidden: ChanVec<F>,
    pub gate: ChanVec<F>,
}

impl SeBlock {
    pub fn build<F: Element>(
        ps: &mut ParamStore<F>,
        prefix: &str,
        c: usize,
        r: usize,
        seed: u64,
    ) -> Self {
        assert!(r >= 1 && c % r == 0, "SE requires channels divisible by reduction");
        let cr = c / r;
        let b1 = (6.0 / c as f64).sqrt();
        let b2 = (6.0 / cr as f64).sqrt();
        Self {
            c,
            r,
            fc1_w: ps.add_uniform(&format!("{prefix}.fc1.weight"), vec![cr, c], b1, seed),
            fc1_b: ps.add_constant(&format!("{prefix}.fc1.bias"), vec![cr], 0.0),
            fc2_w: ps.add_uniform(&format!("{prefix}.fc2.weight"), vec![c, cr], b2, seed),
            fc2_b: ps.add_constant(&format!("{prefix}.fc2.bias"), vec![c], 0.0),
        }
    }

    pub fn forward<F: Element>(&self, ps: &ParamStore<F>, x: &Tensor<F>) -> (Tensor<F>, SeCtx<F>) {
        let [n, c, _, _, _] = x.shape;
        assert_eq!(c, self.c, "SE channel mismatch");
        let cr = self.c / self.r;
        let w1 = ps.data(self.fc1_w);
        let b1 = ps.data(self.fc1_b);
        let w2 = ps.data(self.fc2_w);
        let b2 = ps.data(self.fc2_b);

        let squeeze = gap_forward(x);
        let mut hidden = ChanVec::zeros(n, cr);
        for nn in 0..n {
            let s = squeeze.row(nn);
            let h = hidden.row_mut(nn);
            for j in 0..cr {
                let mut acc = b1[j];
                acc += dot8(&w1[j * c..(j + 1) * c], s);
                h[j] = if acc > F::zero() { acc } else { F::zero() };
            }
        }
        let mut gate = ChanVec::zeros(n, c);
        for nn in 0..n {
            let h = hidden.row(nn);
            let g = gate.row_mut(nn);
            for ci in 0..c {
                let mut acc = b2[ci];
                acc += dot8(&w2[ci * cr..(ci + 1) * cr], h);
                g[ci] = F::one() / (F::one() + (-acc).exp());
            }
        }

        let sp = x.spatial();
        let mut out = Tensor::zeros(x.shape);
        for_each_chunk_mut(&mut out.data, sp, |i, dst| {
            let g = gate.data[i];
            let src = x.channel(i / c, i % c);
            for (d, &s) in dst.iter_mut().zip(src) {
                *d = s * g;
            }
        });
        (
            out,
            SeCtx {
                squeeze,
                hidden,
                gate,
            },
        )
    }

    pub fn backward<F: Element>(
        &self,
        ps: &ParamStore<F>,
        x: &Tensor<F>,
        ctx: &SeCtx<F>,
        gout: &Tensor<F>,
        grads: &mut GradStore<F>,
    ) -> Tensor<F> {
        let [n, c, _, _, _] = x.shape;
        let cr = self.c / self.r;
        let w1 = ps.data(self.fc1_w);
        let w2 = ps.data(self.fc2_w);
        let sp = x.spatial();
        let spf = F::from_f64_lossy(sp as f64);

        // dgate[n,c] = <gout, x> per channel.
        let mut dgate = ChanVec::zeros(n, c);
        for nn in 0..n {
            for ci in 0..c {
                dgate.row_mut(nn)[ci] = dot8(gout.channel(nn, ci), x.channel(nn, ci));
            }
        }
        // Through the sigmoid.
        let mut du = ChanVec::zeros(n, c);
        for i in 0..n * c {
            let g = ctx.gate.data[i];
            du.data[i] = dgate.data[i] * g * (F::one() - g);
        }
        // fc2 grads and hidden grad.
        {
            let (dw2, db2) = grads.get2_mut(self.fc2_w, self.fc2_b);
            for nn in 0..n {
                let h = ctx.hidden.row(nn);
                let d = du.row(nn);
                for ci in 0..c {
                    db2[ci] += d[ci];
                    for j in 0..cr {
                        dw2[ci * cr + j] += d[ci] * h[j];
                    }
                }
            }
        }
        let mut dh = ChanVec::zeros(n, cr);
        for nn in 0..n {
            let d = du.row(nn);
            let h = ctx.hidden.row(nn);
            let dst = dh.row_mut(nn);
            for j in 0..cr {
                if h[j] > F::zero() {
                    let mut acc = F::zero();
                    for ci in 0..c {
                        acc += d[ci] * w2[ci * cr + j];
                    }
                    dst[j] = acc;
                }
            }
        }
        // fc1 grads and squeeze grad.
        {
            let (dw1, db1) = grads.get2_mut(self.fc1_w, self.fc1_b);
            for nn in 0..n {
                let s = ctx.squeeze.row(nn);
                let d = dh.row(nn);
                for j in 0..cr {
                    db1[j] += d[j];
                    for ci in 0..c {
                        dw1[j * c + ci] += d[j] * s[ci];
                    }
                }
            }
        }
        let mut ds = ChanVec::zeros(n, c);
        for nn in 0..n {
            let d = dh.row(nn);
            let dst = ds.row_mut(nn);
            for ci in 0..c {
                let mut acc = F::zero();
                for j in 0..cr {
                    acc += d[j] * w1[j * c + ci];
                }
                dst[ci] = acc;
            }
        }

        // dx = gout * gate + broadcast(ds)/spatial.
        let mut dx = Tensor::zeros(x.shape);
        for_each_chunk_mut(&mut dx.data, sp, |i, dst| {
            let g = ctx.gate.data[i];
            let add = ds.data[i] / spf;
            let src = gout.channel(i / c, i % c);
            for (d, &gv) in dst.iter_mut().zip(src) {
                *d = gv * g + add;
            }
        });
        dx
    }
}
