//! Standard 3D convolution, stride 1, odd kernel, size-preserving
//! zero padding. The 3x3x3 case runs a fused three-tap row stencil.

use mfs_core::par::for_each_chunk_mut;

use super::reduce::{dot3_shifted8, dot_shifted8, sum8};
use crate::tensor::{Element, Tensor};

#[derive(Debug, Clone, Copy)]
pub struct ConvDims {
    pub cin: usize,
    pub cout: usize,
    pub k: usize,
}

impl ConvDims {
    pub fn weight_len(&self) -> usize {
        self.cout * self.cin * self.k * self.k * self.k
    }
}

/// He-uniform initialization bound for a conv followed by ReLU.
pub fn he_bound(cin: usize, k: usize) -> f64 {
    (6.0 / (cin * k * k * k) as f64).sqrt()
}

/// dst[x] += a0*src[x-1] + a1*src[x] + a2*src[x+1], truncated at row ends.
#[inline]
fn fma3_row<F: Element>(dst: &mut [F], src: &[F], a0: F, a1: F, a2: F) {
    let n = dst.len();
    debug_assert_eq!(src.len(), n);
    if n == 1 {
        dst[0] += a1 * src[0];
        return;
    }
    dst[0] += a1 * src[0] + a2 * src[1];
    dst[n - 1] += a0 * src[n - 2] + a1 * src[n - 1];
    // Interior as zipped subslices so the stencil vectorizes without
    // bounds checks.
    let d = &mut dst[1..n - 1];
    let s0 = &src[..n - 2];
    let s1 = &src[1..n - 1];
    let s2 = &src[2..];
    for (((d, &v0), &v1), &v2) in d.iter_mut().zip(s0).zip(s1).zip(s2) {
        *d += a0 * v0 + a1 * v1 + a2 * v2;
    }
}

/// dst[x] += a * src[x + shift] over the valid overlap.
#[inline]
fn add_shifted<F: Element>(dst: &mut [F], src: &[F], a: F, shift: isize) {
    let n = dst.len();
    if shift >= 0 {
        let s = shift as usize;
        if s >= n {
            return;
        }
        for (d, v) in dst[..n - s].iter_mut().zip(&src[s..]) {
            *d += a * *v;
        }
    } else {
        let s = (-shift) as usize;
        if s >= n {
            return;
        }
        for (d, v) in dst[s..].iter_mut().zip(&src[..n - s]) {
            *d += a * *v;
        }
    }
}

pub fn conv3d_forward<F: Element>(x: &Tensor<F>, w: &[F], b: &[F], dims: ConvDims) -> Tensor<F> {
    let [n, cin, d, h, wd] = x.shape;
    assert_eq!(cin, dims.cin, "conv3d: input channel mismatch");
    assert_eq!(w.len(), dims.weight_len());
    assert_eq!(b.len(), dims.cout);
    let k = dims.k;
    let pad = k / 2;
    let mut out = Tensor::zeros([n, dims.cout, d, h, wd]);
    let plane = h * wd;
    let kk = k * k * k;

    for_each_chunk_mut(&mut out.data, plane, |pidx, dst_plane| {
        let nn = pidx / (dims.cout * d);
        let rem = pidx % (dims.cout * d);
        let co = rem / d;
        let oz = rem % d;
        dst_plane.fill(b[co]);
        for ci in 0..cin {
            let xc = x.channel(nn, ci);
            let wbase = (co * cin + ci) * kk;
            for kz in 0..k {
                let iz = oz + kz;
                if iz < pad || iz - pad >= d {
                    continue;
                }
                let iz = iz - pad;
                for ky in 0..k {
                    for oy in 0..h {
                        let iy = oy + ky;
                        if iy < pad || iy - pad >= h {
                            continue;
                        }
                        let iy = iy - pad;
                        let src = &xc[(iz * h + iy) * wd..(iz * h + iy) * wd + wd];
                        let dst = &mut dst_plane[oy * wd..oy * wd + wd];
                        let wrow = &w[wbase + (kz * k + ky) * k..wbase + (kz * k + ky) * k + k];
                        if k == 3 {
                            fma3_row(dst, src, wrow[0], wrow[1], wrow[2]);
                        } else {
                            for (kx, &wv) in wrow.iter().enumerate() {
                                add_shifted(dst, src, wv, kx as isize - pad as isize);
                            }
                        }
                    }
                }
            }
        }
    });
    out
}

/// Backward pass. Accumulates `dw` and `db` in place and returns the
/// input gradient.
pub fn conv3d_backward<F: Element>(
    x: &Tensor<F>,
    w: &[F],
    dims: ConvDims,
    gout: &Tensor<F>,
    dw: &mut [F],
    db: &mut [F],
) -> Tensor<F> {
    let [n, cin, d, h, wd] = x.shape;
    let k = dims.k;
    let pad = k / 2;
    let kk = k * k * k;
    assert_eq!(gout.shape, [n, dims.cout, d, h, wd]);
    assert_eq!(dw.len(), dims.weight_len());
    assert_eq!(db.len(), dims.cout);

    // Bias gradient: plain channel sums.
    let db_parts: Vec<F> = mfs_core::par::map_indexed(dims.cout, |co| {
        let mut s = F::zero();
        for nn in 0..n {
            s += sum8(gout.channel(nn, co));
        }
        s
    });
    for (dst, src) in db.iter_mut().zip(db_parts) {
        *dst += src;
    }

    // Weight gradient: one chunk per output channel.
    for_each_chunk_mut(dw, cin * kk, |co, dwc| {
        for nn in 0..n {
            let gc = gout.channel(nn, co);
            for ci in 0..cin {
                let xc = x.channel(nn, ci);
                for kz in 0..k {
                    for oz in 0..d {
                        let iz = oz + kz;
                        if iz < pad || iz - pad >= d {
                            continue;
                        }
                        let iz = iz - pad;
                        for ky in 0..k {
                            for oy in 0..h {
                                let iy = oy + ky;
                                if iy < pad || iy - pad >= h {
                                    continue;
                                }
                                let iy = iy - pad;
                                let grow = &gc[(oz * h + oy) * wd..(oz * h + oy) * wd + wd];
                                let xrow = &xc[(iz * h + iy) * wd..(iz * h + iy) * wd + wd];
                                if k == 3 {
                                    let taps = dot3_shifted8(grow, xrow);
                                    let base = (ci * 9 + kz * 3 + ky) * 3;
                                    dwc[base] += taps[0];
                                    dwc[base + 1] += taps[1];
                                    dwc[base + 2] += taps[2];
                                } else {
                                    for kx in 0..k {
                                        dwc[(ci * k * k + kz * k + ky) * k + kx] +=
                                            dot_shifted8(grow, xrow, kx as isize - pad as isize);
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    });

    // Input gradient: gather form (transposed stencil).
    let mut dx = Tensor::zeros(x.shape);
    let plane = h * wd;
    for_each_chunk_mut(&mut dx.data, plane, |pidx, dst_plane| {
        let nn = pidx / (cin * d);
        let rem = pidx % (cin * d);
        let ci = rem / d;
        let iz = rem % d;
        for co in 0..dims.cout {
            let gc = gout.channel(nn, co);
            let wbase = (co * cin + ci) * kk;
            for kz in 0..k {
                // iz = oz + kz - pad  =>  oz = iz + pad - kz
                let oz = iz + pad;
                if oz < kz || oz - kz >= d {
                    continue;
                }
                let oz = oz - kz;
                for ky in 0..k {
                    for iy in 0..h {
                        let oy = iy + pad;
                        if oy < ky || oy - ky >= h {
                            continue;
                        }
                        let oy = oy - ky;
                        let src = &gc[(oz * h + oy) * wd..(oz * h + oy) * wd + wd];
                        let dst = &mut dst_plane[iy * wd..iy * wd + wd];
                        let wrow = &w[wbase + (kz * k + ky) * k..wbase + (kz * k + ky) * k + k];
                        if k == 3 {
                            // Transposed taps: reverse kx order.
                            fma3_row(dst, src, wrow[2], wrow[1], wrow[0]);
                        } else {
                            for (kx, &wv) in wrow.iter().enumerate() {
                                add_shifted(dst, src, wv, pad as isize - kx as isize);
                            }
                        }
                    }
                }
            }
        }
    });
    dx
}
