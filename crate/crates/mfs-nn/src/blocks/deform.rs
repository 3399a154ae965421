//! 3D deformable convolution (3x3x3, stride 1, padding 1).
//!
//! A standard offset convolution predicts, per output voxel and kernel
//! tap, a fractional (dz, dy, dx) displacement added to the tap's
//! integer position. Samples are taken by trilinear interpolation with
//! zero contribution outside the volume, then combined with the kernel
//! weights. Offset weights and bias start at zero, so an untrained
//! block is exactly a standard convolution.
//!
//! Offset channel layout: channel `3*k + axis` holds the displacement
//! along `axis` (0 = z, 1 = y, 2 = x) for tap `k = kz*9 + ky*3 + kx`.

use mfs_core::par::{for_each_chunk_mut, map_chunks_mut};

use crate::ops::{conv3d_backward, conv3d_forward, dot8, ConvDims};
use crate::params::{GradStore, ParamId, ParamStore};
use crate::tensor::{Element, Tensor};

pub const TAPS: usize = 27;
pub const OFFSET_CHANNELS: usize = 3 * TAPS;

/// Fixed partition count for backward scatter buffers; constant so that
/// accumulation order never depends on the thread count.
const SCATTER_CHUNKS: usize = 4;

#[derive(Debug, Clone)]
pub struct DeformConv3d {
    pub cin: usize,
    pub cout: usize,
    pub weight: ParamId,     // [cout, cin, 3, 3, 3]
    pub bias: ParamId,       // [cout]
    pub off_weight: ParamId, // [81, cin, k, k, k]
    pub off_bias: ParamId,   // [81]
    pub off_k: usize,
}

/// Saved context: per-voxel offsets in position-major order
/// (`[n][z][y][x][81]`), ready for re-sampling in the backward pass.
#[derive(Debug, Clone)]
pub struct DeformCtx<F> {
    pub offsets_aos: Vec<F>,
}

/// Trilinear interpolation stencil at one sample position, factorized
/// into per-axis weights. `base[a*2+b]` is the flat index of corner
/// (z0+a, y0+b, x0); the x pair is `base` and `base+1`. `interior` means
/// all eight corners are in bounds (the overwhelmingly common case) and
/// enables branch-free evaluation; border stencils keep per-corner
/// validity.
struct Stencil<F> {
    base: [usize; 4],
    valid: [bool; 8],
    interior: bool,
    wz: [F; 2],
    wy: [F; 2],
    wx: [F; 2],
    // Border case only: the cell's low corner and volume dims.
    z0: isize,
    y0: isize,
    x0: isize,
    dims: [usize; 3],
}

#[inline]
fn stencil<F: Element>(pz: F, py: F, px: F, d: usize, h: usize, w: usize) -> Stencil<F> {
    let z0f = pz.floor();
    let y0f = py.floor();
    let x0f = px.floor();
    let fz = pz - z0f;
    let fy = py - y0f;
    let fx = px - x0f;
    let z0 = z0f.to_f64_lossy() as isize;
    let y0 = y0f.to_f64_lossy() as isize;
    let x0 = x0f.to_f64_lossy() as isize;

    let one = F::one();
    let mut st = Stencil {
        base: [0; 4],
        valid: [false; 8],
        interior: z0 >= 0
            && y0 >= 0
            && x0 >= 0
            && (z0 as usize) + 1 < d
            && (y0 as usize) + 1 < h
            && (x0 as usize) + 1 < w,
        wz: [one - fz, fz],
        wy: [one - fy, fy],
        wx: [one - fx, fx],
        z0,
        y0,
        x0,
        dims: [d, h, w],
    };
    if st.interior {
        let (zu, yu, xu) = (z0 as usize, y0 as usize, x0 as usize);
        st.base = [
            (zu * h + yu) * w + xu,
            (zu * h + yu + 1) * w + xu,
            ((zu + 1) * h + yu) * w + xu,
            ((zu + 1) * h + yu + 1) * w + xu,
        ];
        st.valid = [true; 8];
        return st;
    }
    for a in 0..2 {
        let z = z0 + a as isize;
        let zin = z >= 0 && (z as usize) < d;
        for b in 0..2 {
            let y = y0 + b as isize;
            let yin = y >= 0 && (y as usize) < h;
            for c in 0..2 {
                let x = x0 + c as isize;
                let xin = x >= 0 && (x as usize) < w;
                st.valid[(a * 2 + b) * 2 + c] = zin && yin && xin;
            }
        }
    }
    st
}

impl<F: Element> Stencil<F> {
    /// Sampled value from one channel.
    #[inline]
    fn value(&self, xc: &[F]) -> F {
        if self.interior {
            let p00 = self.wx[0] * xc[self.base[0]] + self.wx[1] * xc[self.base[0] + 1];
            let p01 = self.wx[0] * xc[self.base[1]] + self.wx[1] * xc[self.base[1] + 1];
            let p10 = self.wx[0] * xc[self.base[2]] + self.wx[1] * xc[self.base[2] + 1];
            let p11 = self.wx[0] * xc[self.base[3]] + self.wx[1] * xc[self.base[3] + 1];
            self.wz[0] * (self.wy[0] * p00 + self.wy[1] * p01)
                + self.wz[1] * (self.wy[0] * p10 + self.wy[1] * p11)
        } else {
            self.value_slow(xc)
        }
    }

    #[inline]
    fn border_index(&self, a: usize, b: usize, c: usize) -> usize {
        let [_, h, w] = [self.dims[0], self.dims[1], self.dims[2]];
        ((self.z0 + a as isize) as usize * h + (self.y0 + b as isize) as usize) * w
            + (self.x0 + c as isize) as usize
    }

    #[inline(never)]
    fn value_slow(&self, xc: &[F]) -> F {
        let mut v = F::zero();
        for a in 0..2 {
            for b in 0..2 {
                for c in 0..2 {
                    if self.valid[(a * 2 + b) * 2 + c] {
                        v += self.wz[a] * self.wy[b] * self.wx[c] * xc[self.border_index(a, b, c)];
                    }
                }
            }
        }
        v
    }

    /// Value plus derivatives w.r.t. the sample position, and gradient
    /// scatter of `dv` into `dxc`.
    #[inline]
    fn value_grads_scatter(&self, xc: &[F], dv: F, dxc: &mut [F]) -> (F, F, F, F) {
        if self.interior {
            let (b00, b01, b10, b11) =
                (self.base[0], self.base[1], self.base[2], self.base[3]);
            let (x000, x001) = (xc[b00], xc[b00 + 1]);
            let (x010, x011) = (xc[b01], xc[b01 + 1]);
            let (x100, x101) = (xc[b10], xc[b10 + 1]);
            let (x110, x111) = (xc[b11], xc[b11 + 1]);
            let p00 = self.wx[0] * x000 + self.wx[1] * x001;
            let p01 = self.wx[0] * x010 + self.wx[1] * x011;
            let p10 = self.wx[0] * x100 + self.wx[1] * x101;
            let p11 = self.wx[0] * x110 + self.wx[1] * x111;
            let q00 = x001 - x000;
            let q01 = x011 - x010;
            let q10 = x101 - x100;
            let q11 = x111 - x110;
            let r0 = self.wy[0] * p00 + self.wy[1] * p01;
            let r1 = self.wy[0] * p10 + self.wy[1] * p11;
            let v = self.wz[0] * r0 + self.wz[1] * r1;
            let vz = r1 - r0;
            let vy = self.wz[0] * (p01 - p00) + self.wz[1] * (p11 - p10);
            let vx = self.wz[0] * (self.wy[0] * q00 + self.wy[1] * q01)
                + self.wz[1] * (self.wy[0] * q10 + self.wy[1] * q11);
            let w00 = dv * self.wz[0] * self.wy[0];
            let w01 = dv * self.wz[0] * self.wy[1];
            let w10 = dv * self.wz[1] * self.wy[0];
            let w11 = dv * self.wz[1] * self.wy[1];
            dxc[b00] += w00 * self.wx[0];
            dxc[b00 + 1] += w00 * self.wx[1];
            dxc[b01] += w01 * self.wx[0];
            dxc[b01 + 1] += w01 * self.wx[1];
            dxc[b10] += w10 * self.wx[0];
            dxc[b10 + 1] += w10 * self.wx[1];
            dxc[b11] += w11 * self.wx[0];
            dxc[b11 + 1] += w11 * self.wx[1];
            (v, vz, vy, vx)
        } else {
            self.value_grads_scatter_slow(xc, dv, dxc)
        }
    }

    #[inline(never)]
    fn value_grads_scatter_slow(&self, xc: &[F], dv: F, dxc: &mut [F]) -> (F, F, F, F) {
        let one = F::one();
        let sz = [-one, one];
        let mut v = F::zero();
        let mut vz = F::zero();
        let mut vy = F::zero();
        let mut vx = F::zero();
        for a in 0..2 {
            for b in 0..2 {
                for c in 0..2 {
                    if self.valid[(a * 2 + b) * 2 + c] {
                        let idx = self.border_index(a, b, c);
                        let xv = xc[idx];
                        v += self.wz[a] * self.wy[b] * self.wx[c] * xv;
                        vz += sz[a] * self.wy[b] * self.wx[c] * xv;
                        vy += self.wz[a] * sz[b] * self.wx[c] * xv;
                        vx += self.wz[a] * self.wy[b] * sz[c] * xv;
                        dxc[idx] += dv * self.wz[a] * self.wy[b] * self.wx[c];
                    }
                }
            }
        }
        (v, vz, vy, vx)
    }
}

impl DeformConv3d {
    pub fn build<F: Element>(
        ps: &mut ParamStore<F>,
        prefix: &str,
        cin: usize,
        cout: usize,
        off_k: usize,
        seed: u64,
    ) -> Self {
        assert!(off_k == 1 || off_k == 3, "offset conv kernel must be 1 or 3");
        let bound = super::super::ops::he_bound(cin, 3);
        Self {
            cin,
            cout,
            weight: ps.add_uniform(
                &format!("{prefix}.weight"),
                vec![cout, cin, 3, 3, 3],
                bound,
                seed,
            ),
            bias: ps.add_constant(&format!("{prefix}.bias"), vec![cout], 0.0),
            // Zero-initialized: training starts from a standard conv.
            off_weight: ps.add_constant(
                &format!("{prefix}.off.weight"),
                vec![OFFSET_CHANNELS, cin, off_k, off_k, off_k],
                0.0,
            ),
            off_bias: ps.add_constant(&format!("{prefix}.off.bias"), vec![OFFSET_CHANNELS], 0.0),
            off_k: off_k,
        }
    }

    fn off_dims(&self) -> ConvDims {
        ConvDims {
            cin: self.cin,
            cout: OFFSET_CHANNELS,
            k: self.off_k,
        }
    }

    pub fn forward<F: Element>(
        &self,
        ps: &ParamStore<F>,
        x: &Tensor<F>,
    ) -> (Tensor<F>, DeformCtx<F>) {
        let [n, cin, d, h, w] = x.shape;
        assert_eq!(cin, self.cin, "deform conv channel mismatch");
        let offsets = conv3d_forward(x, ps.data(self.off_weight), ps.data(self.off_bias), self.off_dims());

        // Transpose offsets to position-major for cache-friendly
        // sampling; row-blocked so reads stay sequential per channel.
        let sp = d * h * w;
        let mut aos = vec![F::zero(); n * sp * OFFSET_CHANNELS];
        for_each_chunk_mut(&mut aos, w * OFFSET_CHANNELS, |row, dst| {
            let nn = row / (d * h);
            let row_off = (row % (d * h)) * w;
            for ch in 0..OFFSET_CHANNELS {
                let src = &offsets.data[(nn * OFFSET_CHANNELS + ch) * sp + row_off..][..w];
                for (x, &v) in src.iter().enumerate() {
                    dst[x * OFFSET_CHANNELS + ch] = v;
                }
            }
        });
        drop(offsets);

        let wk = ps.data(self.weight);
        let bias = ps.data(self.bias);
        let ctaps = cin * TAPS;

        // Compute into [n][z][cout][y][x] blocks, then permute.
        let mut tmp = vec![F::zero(); n * d * self.cout * h * w];
        for_each_chunk_mut(&mut tmp, self.cout * h * w, |nz, block| {
            let nn = nz / d;
            let z = nz % d;
            let mut vals = vec![F::zero(); ctaps];
            for y in 0..h {
                for xx in 0..w {
                    let pos = (nn * d + z) * h * w + y * w + xx;
                    let off = &aos[pos * OFFSET_CHANNELS..(pos + 1) * OFFSET_CHANNELS];
                    for k in 0..TAPS {
                        let (kz, ky, kx) = (k / 9, (k / 3) % 3, k % 3);
                        let pz = F::from_f64_lossy((z + kz) as f64 - 1.0) + off[3 * k];
                        let py = F::from_f64_lossy((y + ky) as f64 - 1.0) + off[3 * k + 1];
                        let px = F::from_f64_lossy((xx + kx) as f64 - 1.0) + off[3 * k + 2];
                        let st = stencil(pz, py, px, d, h, w);
                        for ci in 0..cin {
                            vals[ci * TAPS + k] = st.value(x.channel(nn, ci));
                        }
                    }
                    for co in 0..self.cout {
                        block[(co * h + y) * w + xx] =
                            bias[co] + dot8(&wk[co * ctaps..(co + 1) * ctaps], &vals);
                    }
                }
            }
        });

        let mut out = Tensor::zeros([n, self.cout, d, h, w]);
        let plane = h * w;
        for_each_chunk_mut(&mut out.data, plane, |pidx, dst| {
            let nn = pidx / (self.cout * d);
            let rem = pidx % (self.cout * d);
            let co = rem / d;
            let z = rem % d;
            let src = &tmp[((nn * d + z) * self.cout + co) * plane..][..plane];
            dst.copy_from_slice(src);
        });
        (out, DeformCtx { offsets_aos: aos })
    }

    pub fn backward<F: Element>(
        &self,
        ps: &ParamStore<F>,
        x: &Tensor<F>,
        ctx: &DeformCtx<F>,
        gout: &Tensor<F>,
        grads: &mut GradStore<F>,
    ) -> Tensor<F> {
        let [n, cin, d, h, w] = x.shape;
        let sp = d * h * w;
        let wk = ps.data(self.weight);
        let ctaps = cin * TAPS;
        let planes = n * d;
        let group_planes = planes.div_ceil(SCATTER_CHUNKS);

        // Offset gradients, position-major; each fixed chunk of planes is
        // also handed its own dx/dw/db partials so scatter stays safe and
        // deterministic.
        let mut doff_aos = vec![F::zero(); n * sp * OFFSET_CHANNELS];
        let chunk_elems = group_planes * h * w * OFFSET_CHANNELS;
        type Partial<F> = (Vec<F>, Vec<F>, Vec<F>);
        let partials: Vec<Partial<F>> =
            map_chunks_mut(&mut doff_aos, chunk_elems, |g, doff_slice| {
                let mut dx_part = vec![F::zero(); x.numel()];
                let mut dw_part = vec![F::zero(); wk.len()];
                let mut db_part = vec![F::zero(); self.cout];
                let mut vals = vec![F::zero(); ctaps];
                let mut dvals = vec![F::zero(); ctaps];
                let mut gvec = vec![F::zero(); self.cout];
                let plane_lo = g * group_planes;
                let plane_hi = ((g + 1) * group_planes).min(planes);
                for plane in plane_lo..plane_hi {
                    let nn = plane / d;
                    let z = plane % d;
                    for y in 0..h {
                        for xx in 0..w {
                            let pos = plane * h * w + y * w + xx;
                            let off =
                                &ctx.offsets_aos[pos * OFFSET_CHANNELS..(pos + 1) * OFFSET_CHANNELS];
                            let local = (pos - plane_lo * h * w) * OFFSET_CHANNELS;
                            let doff = &mut doff_slice[local..local + OFFSET_CHANNELS];

                            let s = z * h * w + y * w + xx;
                            for co in 0..self.cout {
                                let gv = gout.data[(nn * self.cout + co) * sp + s];
                                gvec[co] = gv;
                                db_part[co] += gv;
                            }
                            // dvals = W^T gvec.
                            for v in dvals.iter_mut() {
                                *v = F::zero();
                            }
                            for co in 0..self.cout {
                                let gv = gvec[co];
                                let wrow = &wk[co * ctaps..(co + 1) * ctaps];
                                for (dv, &wv) in dvals.iter_mut().zip(wrow) {
                                    *dv += gv * wv;
                                }
                            }
                            for k in 0..TAPS {
                                let (kz, ky, kx) = (k / 9, (k / 3) % 3, k % 3);
                                let pz = F::from_f64_lossy((z + kz) as f64 - 1.0) + off[3 * k];
                                let py = F::from_f64_lossy((y + ky) as f64 - 1.0) + off[3 * k + 1];
                                let px = F::from_f64_lossy((xx + kx) as f64 - 1.0) + off[3 * k + 2];
                                let st = stencil(pz, py, px, d, h, w);
                                let mut gz = F::zero();
                                let mut gy = F::zero();
                                let mut gx = F::zero();
                                for ci in 0..cin {
                                    let xc = x.channel(nn, ci);
                                    let dxc = &mut dx_part[(nn * cin + ci) * sp..][..sp];
                                    let dv = dvals[ci * TAPS + k];
                                    let (v, vz, vy, vx) = st.value_grads_scatter(xc, dv, dxc);
                                    vals[ci * TAPS + k] = v;
                                    gz += dv * vz;
                                    gy += dv * vy;
                                    gx += dv * vx;
                                }
                                doff[3 * k] = gz;
                                doff[3 * k + 1] = gy;
                                doff[3 * k + 2] = gx;
                            }
                            // Kernel gradient: outer product gvec x vals.
                            for co in 0..self.cout {
                                let gv = gvec[co];
                                let drow = &mut dw_part[co * ctaps..(co + 1) * ctaps];
                                for (dst, &v) in drow.iter_mut().zip(vals.iter()) {
                                    *dst += gv * v;
                                }
                            }
                        }
                    }
                }
                (dx_part, dw_part, db_part)
            });

        // Ordered merge of the per-chunk partials.
        let mut dx = Tensor::zeros(x.shape);
        {
            let (dwk, dbk) = grads.get2_mut(self.weight, self.bias);
            for (dx_part, dw_part, db_part) in &partials {
                for (dst, src) in dx.data.iter_mut().zip(dx_part) {
                    *dst += *src;
                }
                for (dst, src) in dwk.iter_mut().zip(dw_part) {
                    *dst += *src;
                }
                for (dst, src) in dbk.iter_mut().zip(db_part) {
                    *dst += *src;
                }
            }
        }

        // Offset gradients back to standard layout (row-blocked gather),
        // then through the offset convolution.
        let mut doff = Tensor::zeros([n, OFFSET_CHANNELS, d, h, w]);
        let plane = h * w;
        for_each_chunk_mut(&mut doff.data, w, |row, dst| {
            let nn = row / (OFFSET_CHANNELS * d * h);
            let rem = row % (OFFSET_CHANNELS * d * h);
            let ch = rem / (d * h);
            let zy = rem % (d * h);
            let pos0 = nn * d * plane + zy * w;
            for (x, v) in dst.iter_mut().enumerate() {
                *v = doff_aos[(pos0 + x) * OFFSET_CHANNELS + ch];
            }
        });
        drop(doff_aos);

        let (dwo, dbo) = grads.get2_mut(self.off_weight, self.off_bias);
        let dx_off = conv3d_backward(x, ps.data(self.off_weight), self.off_dims(), &doff, dwo, dbo);
        for (dst, src) in dx.data.iter_mut().zip(&dx_off.data) {
            *dst += *src;
        }
        dx
    }
}
