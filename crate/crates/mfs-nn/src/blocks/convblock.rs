//! Encoder/decoder stage: two 3x3x3 convolutions, each followed by
//! instance norm and ReLU, with an optional squeeze-and-excite gate at
//! the end.

use crate::ops::{
    conv3d_backward, conv3d_forward, he_bound, instance_norm_backward, instance_norm_forward,
    relu_backward, relu_forward, ConvDims, InstanceNormCtx,
};
use crate::params::{GradStore, ParamId, ParamStore};
use crate::tensor::{Element, Tensor};

use super::se::{SeBlock, SeCtx};

#[derive(Debug, Clone)]
pub struct ConvBlock {
    pub cin: usize,
    pub cout: usize,
    pub conv1_w: ParamId,
    pub conv1_b: ParamId,
    pub norm1_g: ParamId,
    pub norm1_b: ParamId,
    pub conv2_w: ParamId,
    pub conv2_b: ParamId,
    pub norm2_g: ParamId,
    pub norm2_b: ParamId,
    pub se: Option<SeBlock>,
}

pub struct ConvBlockCtx<F> {
    pub x: Tensor<F>,
    pub a1: Tensor<F>,
    pub n1: InstanceNormCtx<F>,
    pub r1: Tensor<F>,
    pub a2: Tensor<F>,
    pub n2: InstanceNormCtx<F>,
    pub r2: Tensor<F>,
    pub se: Option<SeCtx<F>>,
}

impl ConvBlock {
    #[allow(clippy::too_many_arguments)]
    pub fn build<F: Element>(
        ps: &mut ParamStore<F>,
        prefix: &str,
        cin: usize,
        cout: usize,
        with_se: bool,
        se_reduction: usize,
        seed: u64,
    ) -> Self {
        Self {
            cin,
            cout,
            conv1_w: ps.add_uniform(
                &format!("{prefix}.conv1.weight"),
                vec![cout, cin, 3, 3, 3],
                he_bound(cin, 3),
                seed,
            ),
            conv1_b: ps.add_constant(&format!("{prefix}.conv1.bias"), vec![cout], 0.0),
            norm1_g: ps.add_constant(&format!("{prefix}.norm1.gamma"), vec![cout], 1.0),
            norm1_b: ps.add_constant(&format!("{prefix}.norm1.beta"), vec![cout], 0.0),
            conv2_w: ps.add_uniform(
                &format!("{prefix}.conv2.weight"),
                vec![cout, cout, 3, 3, 3],
                he_bound(cout, 3),
                seed,
            ),
            conv2_b: ps.add_constant(&format!("{prefix}.conv2.bias"), vec![cout], 0.0),
            norm2_g: ps.add_constant(&format!("{prefix}.norm2.gamma"), vec![cout], 1.0),
            norm2_b: ps.add_constant(&format!("{prefix}.norm2.beta"), vec![cout], 0.0),
            se: with_se.then(|| SeBlock::build(ps, &format!("{prefix}.se"), cout, se_reduction, seed)),
        }
    }

    fn dims1(&self) -> ConvDims {
        ConvDims {
            cin: self.cin,
            cout: self.cout,
            k: 3,
        }
    }

    fn dims2(&self) -> ConvDims {
        ConvDims {
            cin: self.cout,
            cout: self.cout,
            k: 3,
        }
    }

    pub fn forward<F: Element>(
        &self,
        ps: &ParamStore<F>,
        x: Tensor<F>,
    ) -> (Tensor<F>, ConvBlockCtx<F>) {
        let a1 = conv3d_forward(&x, ps.data(self.conv1_w), ps.data(self.conv1_b), self.dims1());
        let (b1, n1) = instance_norm_forward(&a1, ps.data(self.norm1_g), ps.data(self.norm1_b));
        let r1 = relu_forward(&b1);
        drop(b1);
        let a2 = conv3d_forward(&r1, ps.data(self.conv2_w), ps.data(self.conv2_b), self.dims2());
        let (b2, n2) = instance_norm_forward(&a2, ps.data(self.norm2_g), ps.data(self.norm2_b));
        let r2 = relu_forward(&b2);
        drop(b2);
        let (out, se_ctx) = match &self.se {
            Some(se) => {
                let (o, c) = se.forward(ps, &r2);
                (o, Some(c))
            }
            None => (r2.clone(), None),
        };
        (
            out,
            ConvBlockCtx {
                x,
                a1,
                n1,
                r1,
                a2,
                n2,
                r2,
                se: se_ctx,
            },
        )
    }

    pub fn backward<F: Element>(
        &self,
        ps: &ParamStore<F>,
        ctx: &ConvBlockCtx<F>,
        gout: &Tensor<F>,
        grads: &mut GradStore<F>,
    ) -> Tensor<F> {
        let g = match (&self.se, &ctx.se) {
            (Some(se), Some(se_ctx)) => se.backward(ps, &ctx.r2, se_ctx, gout, grads),
            _ => gout.clone(),
        };
        let g = relu_backward(&ctx.r2, &g);
        let g = {
            let (dg, db) = grads.get2_mut(self.norm2_g, self.norm2_b);
            instance_norm_backward(&ctx.a2, ps.data(self.norm2_g), &ctx.n2, &g, dg, db)
        };
        let g = {
            let (dw, db) = grads.get2_mut(self.conv2_w, self.conv2_b);
            conv3d_backward(&ctx.r1, ps.data(self.conv2_w), self.dims2(), &g, dw, db)
        };
        let g = relu_backward(&ctx.r1, &g);
        let g = {
            let (dg, db) = grads.get2_mut(self.norm1_g, self.norm1_b);
            instance_norm_backward(&ctx.a1, ps.data(self.norm1_g), &ctx.n1, &g, dg, db)
        };
        let (dw, db) = grads.get2_mut(self.conv1_w, self.conv1_b);
        conv3d_backward(&ctx.x, ps.data(self.conv1_w), self.dims1(), &g, dw, db)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_chacha::rand_core::{RngCore, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn randvec(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| (rng.next_u64() >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0)
            .collect()
    }

    #[test]
    fn forward_preserves_spatial_shape() {
        let mut ps = ParamStore::<f64>::new();
        let blk = ConvBlock::build(&mut ps, "b", 2, 8, true, 4, 1);
        let x = Tensor::from_vec([1, 2, 4, 4, 4], randvec(128, 2));
        let (y, _) = blk.forward(&ps, x);
        assert_eq!(y.shape, [1, 8, 4, 4, 4]);
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut ps = ParamStore::<f64>::new();
        let blk = ConvBlock::build(&mut ps, "b", 2, 4, true, 4, 3);
        let x = Tensor::from_vec([1, 2, 2, 3, 3], randvec(36, 4));
        let cvec = randvec(4 * 18, 5);
        let objective = |ps: &ParamStore<f64>, x: &Tensor<f64>| -> f64 {
            let (y, _) = blk.forward(ps, x.clone());
            y.data.iter().zip(&cvec).map(|(a, b)| a * b).sum()
        };
        let (_, ctx) = blk.forward(&ps, x.clone());
        let gout = Tensor::from_vec([1, 4, 2, 3, 3], cvec.clone());
        let mut grads = GradStore::zeros_like(&ps);
        let dx = blk.backward(&ps, &ctx, &gout, &mut grads);

        let eps = 1e-6;
        for i in (0..36).step_by(5) {
            let mut p = x.clone();
            p.data[i] += eps;
            let mut m = x.clone();
            m.data[i] -= eps;
            let num = (objective(&ps, &p) - objective(&ps, &m)) / (2.0 * eps);
            let a = dx.data[i];
            let rel = (num - a).abs() / num.abs().max(a.abs()).max(1e-8);
            assert!(rel < 1e-5, "dx[{i}]: {num} vs {a}");
        }
        for pid in 0..ps.len() {
            let len = ps.data(pid).len();
            for i in (0..len).step_by(17) {
                let orig = ps.data(pid)[i];
                ps.data_mut(pid)[i] = orig + eps;
                let fp = objective(&ps, &x);
                ps.data_mut(pid)[i] = orig - eps;
                let fm = objective(&ps, &x);
                ps.data_mut(pid)[i] = orig;
                let num = (fp - fm) / (2.0 * eps);
                let a = grads.get(pid)[i];
                // Floor above central-difference noise: conv biases feeding
                // instance norm have exactly-zero analytic gradients.
                let rel = (num - a).abs() / num.abs().max(a.abs()).max(1e-5);
                assert!(rel < 1e-4, "{}[{i}]: {num} vs {a}", ps.name(pid));
            }
        }
    }
}
