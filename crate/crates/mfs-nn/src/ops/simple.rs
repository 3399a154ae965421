//! Pointwise activations, 2x max pooling, nearest upsampling, channel
//! concatenation, global average pooling and channel softmax.

use mfs_core::par::{for_each_chunk_mut, map_indexed};

use super::reduce::sum8;
use crate::tensor::{Element, Tensor};

const ELEM_CHUNK: usize = 1 << 14;

pub fn relu_forward<F: Element>(x: &Tensor<F>) -> Tensor<F> {
    let mut out = x.clone();
    for_each_chunk_mut(&mut out.data, ELEM_CHUNK, |_, c| {
        for v in c.iter_mut() {
            if *v < F::zero() {
                *v = F::zero();
            }
        }
    });
    out
}

/// `out` is the saved forward output; derivative is 1 where out > 0.
pub fn relu_backward<F: Element>(out: &Tensor<F>, gout: &Tensor<F>) -> Tensor<F> {
    let mut dx = gout.clone();
    for_each_chunk_mut(&mut dx.data, ELEM_CHUNK, |ci, c| {
        let base = ci * ELEM_CHUNK;
        for (j, v) in c.iter_mut().enumerate() {
            if out.data[base + j] <= F::zero() {
                *v = F::zero();
            }
        }
    });
    dx
}

pub fn sigmoid_forward<F: Element>(x: &Tensor<F>) -> Tensor<F> {
    let mut out = x.clone();
    for_each_chunk_mut(&mut out.data, ELEM_CHUNK, |_, c| {
        for v in c.iter_mut() {
            *v = F::one() / (F::one() + (-*v).exp());
        }
    });
    out
}

/// `out` is the saved forward output (the sigmoid values).
pub fn sigmoid_backward<F: Element>(out: &Tensor<F>, gout: &Tensor<F>) -> Tensor<F> {
    let mut dx = gout.clone();
    for_each_chunk_mut(&mut dx.data, ELEM_CHUNK, |ci, c| {
        let base = ci * ELEM_CHUNK;
        for (j, v) in c.iter_mut().enumerate() {
            let s = out.data[base + j];
            *v = *v * s * (F::one() - s);
        }
    });
    dx
}

/// 2x2x2 max pooling, stride 2. Spatial dims must be even.
/// Returns the pooled tensor and per-output argmax (flat spatial index
/// within the input channel).
pub fn maxpool2_forward<F: Element>(x: &Tensor<F>) -> (Tensor<F>, Vec<u32>) {
    let [n, c, d, h, w] = x.shape;
    assert!(
        d % 2 == 0 && h % 2 == 0 && w % 2 == 0,
        "maxpool2 requires even spatial dims, got {:?}",
        x.shape
    );
    let (od, oh, ow) = (d / 2, h / 2, w / 2);
    let osp = od * oh * ow;
    let mut out = Tensor::zeros([n, c, od, oh, ow]);
    let mut arg = vec![0u32; n * c * osp];

    // One chunk per output channel; arg written in a second pass with
    // identical chunking so indices line up.
    let args: Vec<Vec<u32>> = map_indexed(n * c, |i| {
        let xc = x.channel(i / c, i % c);
        let mut local = vec![0u32; osp];
        for oz in 0..od {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = F::neg_infinity();
                    let mut besti = 0usize;
                    for dz in 0..2 {
                        for dy in 0..2 {
                            for dx in 0..2 {
                                let idx = ((oz * 2 + dz) * h + oy * 2 + dy) * w + ox * 2 + dx;
                                if xc[idx] > best {
                                    best = xc[idx];
                                    besti = idx;
                                }
                            }
                        }
                    }
                    local[(oz * oh + oy) * ow + ox] = besti as u32;
                }
            }
        }
        local
    });
    for_each_chunk_mut(&mut out.data, osp, |i, dst| {
        let xc = x.channel(i / c, i % c);
        for (j, v) in dst.iter_mut().enumerate() {
            *v = xc[args[i][j] as usize];
        }
    });
    for (i, local) in args.into_iter().enumerate() {
        arg[i * osp..(i + 1) * osp].copy_from_slice(&local);
    }
    (out, arg)
}

pub fn maxpool2_backward<F: Element>(
    in_shape: [usize; 5],
    arg: &[u32],
    gout: &Tensor<F>,
) -> Tensor<F> {
    let [_, c, d, h, w] = in_shape;
    let isp = d * h * w;
    let osp = gout.spatial();
    let mut dx = Tensor::zeros(in_shape);
    // Gather form: each input voxel checks whether it won its window.
    for_each_chunk_mut(&mut dx.data, isp, |i, dst| {
        let gc = gout.channel(i / c, i % c);
        let argc = &arg[i * osp..(i + 1) * osp];
        let (oh, ow) = (h / 2, w / 2);
        for iz in 0..d {
            for iy in 0..h {
                for ix in 0..w {
                    let flat = (iz * h + iy) * w + ix;
                    let o = ((iz / 2) * oh + iy / 2) * ow + ix / 2;
                    if argc[o] as usize == flat {
                        dst[flat] = gc[o];
                    }
                }
            }
        }
    });
    dx
}

/// Nearest-neighbor 2x upsampling along all three spatial axes.
pub fn upsample2_forward<F: Element>(x: &Tensor<F>) -> Tensor<F> {
    let [n, c, d, h, w] = x.shape;
    let mut out = Tensor::zeros([n, c, d * 2, h * 2, w * 2]);
    let osp = 8 * d * h * w;
    for_each_chunk_mut(&mut out.data, osp, |i, dst| {
        let xc = x.channel(i / c, i % c);
        for oz in 0..d * 2 {
            for oy in 0..h * 2 {
                let src_row = &xc[((oz / 2) * h + oy / 2) * w..((oz / 2) * h + oy / 2) * w + w];
                let dst_row = &mut dst[(oz * h * 2 + oy) * w * 2..(oz * h * 2 + oy) * w * 2 + w * 2];
                for (ox, v) in dst_row.iter_mut().enumerate() {
                    *v = src_row[ox / 2];
                }
            }
        }
    });
    out
}

pub fn upsample2_backward<F: Element>(in_shape: [usize; 5], gout: &Tensor<F>) -> Tensor<F> {
    let [n, c, d, h, w] = in_shape;
    assert_eq!(gout.shape, [n, c, d * 2, h * 2, w * 2]);
    let isp = d * h * w;
    let mut dx = Tensor::zeros(in_shape);
    for_each_chunk_mut(&mut dx.data, isp, |i, dst| {
        let gc = gout.channel(i / c, i % c);
        for iz in 0..d {
            for iy in 0..h {
                for ix in 0..w {
                    let mut s = F::zero();
                    for dz in 0..2 {
                        for dy in 0..2 {
                            for dx2 in 0..2 {
                                s += gc[((iz * 2 + dz) * h * 2 + iy * 2 + dy) * w * 2
                                    + ix * 2
                                    + dx2];
                            }
                        }
                    }
                    dst[(iz * h + iy) * w + ix] = s;
                }
            }
        }
    });
    dx
}

/// Concatenate along the channel axis.
pub fn concat_channels<F: Element>(a: &Tensor<F>, b: &Tensor<F>) -> Tensor<F> {
    assert_eq!(a.n(), b.n());
    assert_eq!(a.shape[2..], b.shape[2..], "concat spatial mismatch");
    let [n, ca, d, h, w] = a.shape;
    let cb = b.c();
    let mut out = Tensor::zeros([n, ca + cb, d, h, w]);
    for nn in 0..n {
        for c in 0..ca {
            out.channel_mut(nn, c).copy_from_slice(a.channel(nn, c));
        }
        for c in 0..cb {
            out.channel_mut(nn, ca + c).copy_from_slice(b.channel(nn, c));
        }
    }
    out
}

/// Split a channel-concatenated gradient back into the two parts.
pub fn split_channels<F: Element>(g: &Tensor<F>, ca: usize) -> (Tensor<F>, Tensor<F>) {
    let [n, c, d, h, w] = g.shape;
    assert!(ca < c);
    let cb = c - ca;
    let mut ga = Tensor::zeros([n, ca, d, h, w]);
    let mut gb = Tensor::zeros([n, cb, d, h, w]);
    for nn in 0..n {
        for ci in 0..ca {
            ga.channel_mut(nn, ci).copy_from_slice(g.channel(nn, ci));
        }
        for ci in 0..cb {
            gb.channel_mut(nn, ci).copy_from_slice(g.channel(nn, ca + ci));
        }
    }
    (ga, gb)
}

/// Per-(n, c) vector, e.g. pooled channel descriptors.
#[derive(Debug, Clone, PartialEq)]
pub struct ChanVec<F> {
    pub n: usize,
    pub c: usize,
    pub data: Vec<F>,
}

impl<F: Element> ChanVec<F> {
    pub fn zeros(n: usize, c: usize) -> Self {
        Self {
            n,
            c,
            data: vec![F::zero(); n * c],
        }
    }

    #[inline]
    pub fn at(&self, n: usize, c: usize) -> F {
        self.data[n * self.c + c]
    }

    pub fn row(&self, n: usize) -> &[F] {
        &self.data[n * self.c..(n + 1) * self.c]
    }

    pub fn row_mut(&mut self, n: usize) -> &mut [F] {
        &mut self.data[n * self.c..(n + 1) * self.c]
    }
}

/// Global average pool over the spatial axes: `[n,c,d,h,w] -> [n,c]`.
pub fn gap_forward<F: Element>(x: &Tensor<F>) -> ChanVec<F> {
    let [n, c, _, _, _] = x.shape;
    let spf = F::from_f64_lossy(x.spatial() as f64);
    let data = map_indexed(n * c, |i| sum8(x.channel(i / c, i % c)) / spf);
    ChanVec { n, c, data }
}

/// Broadcast the pooled gradient back over the spatial axes.
pub fn gap_backward<F: Element>(in_shape: [usize; 5], g: &ChanVec<F>) -> Tensor<F> {
    let sp = in_shape[2] * in_shape[3] * in_shape[4];
    let spf = F::from_f64_lossy(sp as f64);
    let mut dx = Tensor::zeros(in_shape);
    for_each_chunk_mut(&mut dx.data, sp, |i, dst| {
        let v = g.data[i] / spf;
        dst.fill(v);
    });
    dx
}

/// Softmax along the channel axis, per batch element.
pub fn channel_softmax<F: Element>(v: &ChanVec<F>) -> ChanVec<F> {
    let mut out = ChanVec::zeros(v.n, v.c);
    for n in 0..v.n {
        let row = v.row(n);
        let max = row.iter().cloned().fold(F::neg_infinity(), F::max);
        let exps: Vec<F> = row.iter().map(|&x| (x - max).exp()).collect();
        let denom: F = sum8(&exps);
        for (o, e) in out.row_mut(n).iter_mut().zip(exps) {
            *o = e / denom;
        }
    }
    out
}

/// Backward of channel softmax: `da -> dv` given saved softmax output `a`.
pub fn channel_softmax_backward<F: Element>(a: &ChanVec<F>, da: &ChanVec<F>) -> ChanVec<F> {
    let mut out = ChanVec::zeros(a.n, a.c);
    for n in 0..a.n {
        let arow = a.row(n);
        let drow = da.row(n);
        let dot: F = arow.iter().zip(drow).map(|(&x, &y)| x * y).sum();
        for (o, (&av, &dv)) in out.row_mut(n).iter_mut().zip(arow.iter().zip(drow)) {
            *o = av * (dv - dot);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relu_and_backward() {
        let x = Tensor::from_vec([1, 1, 1, 1, 4], vec![-1.0f64, 0.0, 2.0, -0.5]);
        let y = relu_forward(&x);
        assert_eq!(y.data, vec![0.0, 0.0, 2.0, 0.0]);
        let g = Tensor::from_vec([1, 1, 1, 1, 4], vec![1.0; 4]);
        let dx = relu_backward(&y, &g);
        assert_eq!(dx.data, vec![0.0, 0.0, 1.0, 0.0]);
    }

    #[test]
    fn maxpool_picks_max_and_routes_gradient() {
        let mut x = Tensor::<f64>::zeros([1, 1, 2, 2, 2]);
        x.data = vec![1.0, 5.0, 2.0, 3.0, 0.0, -1.0, 4.0, 2.5];
        let (y, arg) = maxpool2_forward(&x);
        assert_eq!(y.shape, [1, 1, 1, 1, 1]);
        assert_eq!(y.data[0], 5.0);
        assert_eq!(arg[0], 1);
        let g = Tensor::from_vec([1, 1, 1, 1, 1], vec![7.0]);
        let dx = maxpool2_backward([1, 1, 2, 2, 2], &arg, &g);
        assert_eq!(dx.data[1], 7.0);
        assert_eq!(dx.data.iter().filter(|&&v| v != 0.0).count(), 1);
    }

    #[test]
    fn upsample_round_trip_shapes() {
        let x = Tensor::from_vec([1, 2, 1, 1, 2], vec![1.0f64, 2.0, 3.0, 4.0]);
        let y = upsample2_forward(&x);
        assert_eq!(y.shape, [1, 2, 2, 2, 4]);
        // Each input voxel becomes an 8-voxel block.
        assert_eq!(y.at(0, 0, 0, 0, 0), 1.0);
        assert_eq!(y.at(0, 0, 1, 1, 1), 1.0);
        assert_eq!(y.at(0, 0, 0, 0, 2), 2.0);
        let g = Tensor::from_vec([1, 2, 2, 2, 4], vec![1.0; 32]);
        let dx = upsample2_backward([1, 2, 1, 1, 2], &g);
        assert!(dx.data.iter().all(|&v| v == 8.0));
    }

    #[test]
    fn concat_split_round_trip() {
        let a = Tensor::from_vec([1, 1, 1, 1, 2], vec![1.0f64, 2.0]);
        let b = Tensor::from_vec([1, 2, 1, 1, 2], vec![3.0, 4.0, 5.0, 6.0]);
        let cat = concat_channels(&a, &b);
        assert_eq!(cat.shape, [1, 3, 1, 1, 2]);
        assert_eq!(cat.data, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let (ga, gb) = split_channels(&cat, 1);
        assert_eq!(ga.data, a.data);
        assert_eq!(gb.data, b.data);
    }

    #[test]
    fn gap_of_constant_is_constant() {
        let x = Tensor::from_vec([1, 2, 1, 2, 2], vec![3.0f64; 8]);
        let g = gap_forward(&x);
        assert_eq!(g.data, vec![3.0, 3.0]);
    }

    #[test]
    fn softmax_sums_to_one_and_uniform_case() {
        let v = ChanVec {
            n: 1,
            c: 4,
            data: vec![0.3f64, 0.3, 0.3, 0.3],
        };
        let a = channel_softmax(&v);
        for &x in &a.data {
            assert!((x - 0.25).abs() < 1e-12);
        }
        let v = ChanVec {
            n: 1,
            c: 3,
            data: vec![1.0f64, 2.0, 3.0],
        };
        let a = channel_softmax(&v);
        let s: f64 = a.data.iter().sum();
        assert!((s - 1.0).abs() < 1e-12);
        assert!(a.data[2] > a.data[1] && a.data[1] > a.data[0]);
    }

    #[test]
    fn softmax_backward_matches_fd() {
        let v = ChanVec {
            n: 1,
            c: 4,
            data: vec![0.4f64, -1.2, 0.9, 0.1],
        };
        let c = [0.7, -0.3, 0.2, 0.5];
        let f = |v: &ChanVec<f64>| -> f64 {
            let a = channel_softmax(v);
            a.data.iter().zip(&c).map(|(x, y)| x * y).sum()
        };
        let a = channel_softmax(&v);
        let da = ChanVec {
            n: 1,
            c: 4,
            data: c.to_vec(),
        };
        let dv = channel_softmax_backward(&a, &da);
        let eps = 1e-6;
        for i in 0..4 {
            let mut vp = v.clone();
            vp.data[i] += eps;
            let mut vm = v.clone();
            vm.data[i] -= eps;
            let num = (f(&vp) - f(&vm)) / (2.0 * eps);
            assert!((num - dv.data[i]).abs() < 1e-8, "{num} vs {}", dv.data[i]);
        }
    }
}
