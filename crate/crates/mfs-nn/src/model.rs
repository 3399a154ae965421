//! Network assembly: a three-level U-Net backbone with two pooling
//! stages, squeeze-and-excite after each conv pair, and a sigmoid head.
//!
//! `Snet` stacks CT and MRI as input channels of a single encoder.
//! `SnetMa` runs separate CT and MRI encoders and fuses each skip pair
//! and the bottleneck pair with modality attention before a single
//! decoder. An absent MRI is zero-substituted before the MRI encoder,
//! which is exactly how modality dropout presents missing inputs during
//! training.
//!
//! The head convolution is zero-initialized, so an untrained model
//! outputs 0.5 everywhere.

use serde::{Deserialize, Serialize};

use mfs_core::grid::GridSpec;
use mfs_core::volume::{BinaryMask, ScalarVolume};

use crate::blocks::{ConvBlock, ConvBlockCtx, ModalityAttention, ModalityAttentionCtx};
use crate::error::NnError;
use crate::ops::{
    concat_channels, conv3d_backward, conv3d_forward, maxpool2_backward, maxpool2_forward,
    sigmoid_backward, sigmoid_forward, split_channels, upsample2_backward, upsample2_forward,
    ConvDims,
};
use crate::params::{GradStore, ParamId, ParamStore};
use crate::tensor::{add, Element, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Arch {
    #[serde(rename = "SNET")]
    Snet,
    #[serde(rename = "SNET_MA")]
    SnetMa,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub arch: Arch,
    #[serde(default = "default_base_channels")]
    pub base_channels: usize,
    /// Level count including the bottleneck; fixed at 3 (two poolings).
    #[serde(default = "default_levels")]
    pub levels: usize,
    #[serde(default = "default_true")]
    pub se_everywhere: bool,
    /// SNET_MA only: attention at both skip levels (the bottleneck pair
    /// always goes through attention). When false, skips fuse by sum.
    #[serde(default = "default_true")]
    pub attention_at_skips: bool,
    #[serde(default = "default_se_reduction")]
    pub se_reduction: usize,
    /// Kernel size of the offset-predicting conv inside deformable
    /// convolutions (1 or 3).
    #[serde(default = "default_offset_kernel")]
    pub offset_kernel: usize,
    /// Optional FC bottleneck between pooling and softmax in the
    /// attention block.
    #[serde(default)]
    pub attention_fc_gate: bool,
    /// Multiply attention weights by C (they sum to 1 otherwise).
    #[serde(default)]
    pub attention_scale_by_channels: bool,
}

fn default_base_channels() -> usize {
    16
}
fn default_levels() -> usize {
    3
}
fn default_true() -> bool {
    true
}
fn default_se_reduction() -> usize {
    4
}
fn default_offset_kernel() -> usize {
    3
}

impl ModelConfig {
    pub fn snet(base_channels: usize) -> Self {
        Self {
            arch: Arch::Snet,
            base_channels,
            levels: 3,
            se_everywhere: true,
            attention_at_skips: true,
            se_reduction: 4,
            offset_kernel: 3,
            attention_fc_gate: false,
            attention_scale_by_channels: false,
        }
    }

    pub fn snet_ma(base_channels: usize) -> Self {
        Self {
            arch: Arch::SnetMa,
            ..Self::snet(base_channels)
        }
    }

    pub fn validate(&self) -> Result<(), NnError> {
        if self.levels != 3 {
            return Err(NnError::InvalidConfig(format!(
                "levels must be 3 (two pooling stages), got {}",
                self.levels
            )));
        }
        if self.base_channels < 2 {
            return Err(NnError::InvalidConfig(
                "base_channels must be >= 2".into(),
            ));
        }
        if self.se_everywhere && self.base_channels % self.se_reduction != 0 {
            return Err(NnError::InvalidConfig(format!(
                "base_channels {} must be divisible by se_reduction {}",
                self.base_channels, self.se_reduction
            )));
        }
        if self.offset_kernel != 1 && self.offset_kernel != 3 {
            return Err(NnError::InvalidConfig(format!(
                "offset_kernel must be 1 or 3, got {}",
                self.offset_kernel
            )));
        }
        Ok(())
    }

    /// Channel widths per level: (B, 2B, 4B).
    pub fn channels(&self) -> [usize; 3] {
        let b = self.base_channels;
        [b, 2 * b, 4 * b]
    }
}

#[derive(Debug, Clone)]
pub struct Model {
    pub config: ModelConfig,
    enc_ct: Vec<ConvBlock>,
    enc_mri: Vec<ConvBlock>,
    att_skips: Vec<ModalityAttention>,
    att_bottleneck: Option<ModalityAttention>,
    dec: Vec<ConvBlock>,
    head_w: ParamId,
    head_b: ParamId,
}

/// Everything the backward pass needs from one forward pass.
pub struct ForwardCtx<F> {
    enc_ct: Vec<ConvBlockCtx<F>>,
    enc_mri: Vec<ConvBlockCtx<F>>,
    enc_mri_outs: Vec<Tensor<F>>,
    pools_ct: Vec<([usize; 5], Vec<u32>)>,
    pools_mri: Vec<([usize; 5], Vec<u32>)>,
    att_skips: Vec<ModalityAttentionCtx<F>>,
    att_bottleneck: Option<ModalityAttentionCtx<F>>,
    dec: Vec<ConvBlockCtx<F>>,
    up_in_shapes: Vec<[usize; 5]>,
    cat_up_channels: Vec<usize>,
    head_in: Tensor<F>,
    /// Saved sigmoid output (also the model output).
    pub prob: Tensor<F>,
}

impl Model {
    /// Build the network and its deterministic initial parameters.
    pub fn build<F: Element>(
        config: &ModelConfig,
        seed: u64,
    ) -> Result<(Self, ParamStore<F>), NnError> {
        config.validate()?;
        let mut ps = ParamStore::new();
        let [c1, c2, c3] = config.channels();
        let se = config.se_everywhere;
        let r = config.se_reduction;

        let in_ch = match config.arch {
            Arch::Snet => 2,
            Arch::SnetMa => 1,
        };
        let enc_prefix = match config.arch {
            Arch::Snet => "enc",
            Arch::SnetMa => "enc_ct",
        };
        let enc_ct = vec![
            ConvBlock::build(&mut ps, &format!("{enc_prefix}.l1"), in_ch, c1, se, r, seed),
            ConvBlock::build(&mut ps, &format!("{enc_prefix}.l2"), c1, c2, se, r, seed),
            ConvBlock::build(&mut ps, &format!("{enc_prefix}.l3"), c2, c3, se, r, seed),
        ];
        let (enc_mri, att_skips, att_bottleneck) = match config.arch {
            Arch::Snet => (Vec::new(), Vec::new(), None),
            Arch::SnetMa => {
                let enc_mri = vec![
                    ConvBlock::build(&mut ps, "enc_mri.l1", 1, c1, se, r, seed),
                    ConvBlock::build(&mut ps, "enc_mri.l2", c1, c2, se, r, seed),
                    ConvBlock::build(&mut ps, "enc_mri.l3", c2, c3, se, r, seed),
                ];
                let mut att_skips = Vec::new();
                if config.attention_at_skips {
                    for (l, c) in [(1usize, c1), (2, c2)] {
                        att_skips.push(ModalityAttention::build(
                            &mut ps,
                            &format!("att.l{l}"),
                            c,
                            config.offset_kernel,
                            config.attention_fc_gate,
                            r,
                            config.attention_scale_by_channels,
                            seed,
                        ));
                    }
                }
                let bott = ModalityAttention::build(
                    &mut ps,
                    "att.l3",
                    c3,
                    config.offset_kernel,
                    config.attention_fc_gate,
                    r,
                    config.attention_scale_by_channels,
                    seed,
                );
                (enc_mri, att_skips, Some(bott))
            }
        };

        let dec = vec![
            ConvBlock::build(&mut ps, "dec.l2", c3 + c2, c2, se, r, seed),
            ConvBlock::build(&mut ps, "dec.l1", c2 + c1, c1, se, r, seed),
        ];
        // Zero-initialized head: sigmoid(0) = 0.5 before training.
        let head_w = ps.add_constant("head.weight", vec![1, c1, 1, 1, 1], 0.0);
        let head_b = ps.add_constant("head.bias", vec![1], 0.0);

        Ok((
            Self {
                config: *config,
                enc_ct,
                enc_mri,
                att_skips,
                att_bottleneck,
                dec,
                head_w,
                head_b,
            },
            ps,
        ))
    }

    /// Number of modality attention blocks (2 skips + 1 bottleneck for
    /// the default SNET_MA configuration).
    pub fn attention_block_count(&self) -> usize {
        self.att_skips.len() + self.att_bottleneck.is_some() as usize
    }

    fn head_dims(&self) -> ConvDims {
        ConvDims {
            cin: self.config.channels()[0],
            cout: 1,
            k: 1,
        }
    }

    fn check_dims(shape: [usize; 5]) -> Result<(), NnError> {
        let [_, _, d, h, w] = shape;
        if d % 4 != 0 || h % 4 != 0 || w % 4 != 0 {
            return Err(NnError::BadDims([d, h, w]));
        }
        Ok(())
    }

    /// Run one encoder over an input, returning block ctxs, per-level
    /// outputs and pooling contexts.
    #[allow(clippy::type_complexity)]
    fn encode<F: Element>(
        &self,
        ps: &ParamStore<F>,
        blocks: &[ConvBlock],
        x: Tensor<F>,
    ) -> (
        Vec<ConvBlockCtx<F>>,
        Vec<Tensor<F>>,
        Vec<([usize; 5], Vec<u32>)>,
    ) {
        let mut ctxs = Vec::with_capacity(3);
        let mut outs = Vec::with_capacity(3);
        let mut pools = Vec::with_capacity(2);
        let mut cur = x;
        for (l, blk) in blocks.iter().enumerate() {
            let (out, ctx) = blk.forward(ps, cur);
            ctxs.push(ctx);
            if l < 2 {
                let (pooled, arg) = maxpool2_forward(&out);
                pools.push((out.shape, arg));
                outs.push(out);
                cur = pooled;
            } else {
                outs.push(out.clone());
                cur = out;
            }
        }
        (ctxs, outs, pools)
    }

    /// Forward pass on preprocessed tensors `[n,1,d,h,w]`.
    ///
    /// `mri = None` zero-substitutes the MRI stream for `SnetMa` and is
    /// an error for `Snet`, whose stacked input has no MRI encoder.
    pub fn forward<F: Element>(
        &self,
        ps: &ParamStore<F>,
        ct: &Tensor<F>,
        mri: Option<&Tensor<F>>,
    ) -> Result<(Tensor<F>, ForwardCtx<F>), NnError> {
        Self::check_dims(ct.shape)?;
        if let Some(m) = mri {
            if m.shape != ct.shape {
                return Err(NnError::ShapeMismatch(format!(
                    "ct {:?} vs mri {:?}",
                    ct.shape, m.shape
                )));
            }
        }

        let (skip1, skip2, bott, ctx_parts) = match self.config.arch {
            Arch::Snet => {
                let m = mri.ok_or_else(|| {
                    NnError::MissingModality(
                        "SNET consumes a stacked (CT, MRI) input; MRI may not be absent".into(),
                    )
                })?;
                let x = concat_channels(ct, m);
                let (ctxs, mut outs, pools) = self.encode(ps, &self.enc_ct, x);
                let bott = outs.pop().unwrap();
                let skip2 = outs.pop().unwrap();
                let skip1 = outs.pop().unwrap();
                (
                    skip1,
                    skip2,
                    bott,
                    (ctxs, Vec::new(), Vec::new(), pools, Vec::new(), Vec::new(), None),
                )
            }
            Arch::SnetMa => {
                let zero_mri;
                let m = match mri {
                    Some(m) => m,
                    None => {
                        zero_mri = Tensor::zeros(ct.shape);
                        &zero_mri
                    }
                };
                let (ct_ctxs, ct_outs, ct_pools) = self.encode(ps, &self.enc_ct, ct.clone());
                let (mri_ctxs, mri_outs, mri_pools) = self.encode(ps, &self.enc_mri, m.clone());

                let mut att_ctxs = Vec::new();
                let (skip1, skip2) = if self.config.attention_at_skips {
                    let (s1, a1) = self.att_skips[0].forward(ps, &mri_outs[0], &ct_outs[0]);
                    let (s2, a2) = self.att_skips[1].forward(ps, &mri_outs[1], &ct_outs[1]);
                    att_ctxs.push(a1);
                    att_ctxs.push(a2);
                    (s1, s2)
                } else {
                    (
                        add(&ct_outs[0], &mri_outs[0]),
                        add(&ct_outs[1], &mri_outs[1]),
                    )
                };
                let (bott, ab) = self
                    .att_bottleneck
                    .as_ref()
                    .expect("SNET_MA always has bottleneck attention")
                    .forward(ps, &mri_outs[2], &ct_outs[2]);
                drop(ct_outs);
                (
                    skip1,
                    skip2,
                    bott,
                    (
                        ct_ctxs,
                        mri_ctxs,
                        mri_outs,
                        ct_pools,
                        mri_pools,
                        att_ctxs,
                        Some(ab),
                    ),
                )
            }
        };
        let (enc_ct, enc_mri, enc_mri_outs, pools_ct, pools_mri, att_skips, att_bott) = ctx_parts;

        // Decoder.
        let mut up_in_shapes = Vec::with_capacity(2);
        let mut cat_up_channels = Vec::with_capacity(2);
        let mut dec_ctxs = Vec::with_capacity(2);

        up_in_shapes.push(bott.shape);
        let up2 = upsample2_forward(&bott);
        cat_up_channels.push(up2.c());
        let cat2 = concat_channels(&up2, &skip2);
        drop(up2);
        let (d2, d2ctx) = self.dec[0].forward(ps, cat2);
        dec_ctxs.push(d2ctx);

        up_in_shapes.push(d2.shape);
        let up1 = upsample2_forward(&d2);
        drop(d2);
        cat_up_channels.push(up1.c());
        let cat1 = concat_channels(&up1, &skip1);
        drop(up1);
        let (d1, d1ctx) = self.dec[1].forward(ps, cat1);
        dec_ctxs.push(d1ctx);

        let logits = conv3d_forward(&d1, ps.data(self.head_w), ps.data(self.head_b), self.head_dims());
        let prob = sigmoid_forward(&logits);

        Ok((
            prob.clone(),
            ForwardCtx {
                enc_ct,
                enc_mri,
                enc_mri_outs,
                pools_ct,
                pools_mri,
                att_skips,
                att_bottleneck: att_bott,
                dec: dec_ctxs,
                up_in_shapes,
                cat_up_channels,
                head_in: d1,
                prob,
            },
        ))
    }

    /// Backward pass from the gradient w.r.t. the output probabilities.
    pub fn backward<F: Element>(
        &self,
        ps: &ParamStore<F>,
        ctx: &ForwardCtx<F>,
        dprob: &Tensor<F>,
        grads: &mut GradStore<F>,
    ) {
        let g = sigmoid_backward(&ctx.prob, dprob);
        let g = {
            let (dw, db) = grads.get2_mut(self.head_w, self.head_b);
            conv3d_backward(&ctx.head_in, ps.data(self.head_w), self.head_dims(), &g, dw, db)
        };

        // Decoder level 1.
        let g = self.dec[1].backward(ps, &ctx.dec[1], &g, grads);
        let (g_up1, mut g_skip1) = split_channels(&g, ctx.cat_up_channels[1]);
        let g = upsample2_backward(ctx.up_in_shapes[1], &g_up1);

        // Decoder level 2.
        let g = self.dec[0].backward(ps, &ctx.dec[0], &g, grads);
        let (g_up2, mut g_skip2) = split_channels(&g, ctx.cat_up_channels[0]);
        let g_bott = upsample2_backward(ctx.up_in_shapes[0], &g_up2);

        match self.config.arch {
            Arch::Snet => {
                // Bottleneck gradient flows into enc l3; skip gradients
                // join the pooled paths below.
                let g3 = self.enc_ct[2].backward(ps, &ctx.enc_ct[2], &g_bott, grads);
                let g3 = maxpool2_backward(ctx.pools_ct[1].0, &ctx.pools_ct[1].1, &g3);
                for (a, b) in g_skip2.data.iter_mut().zip(&g3.data) {
                    *a += *b;
                }
                let g2 = self.enc_ct[1].backward(ps, &ctx.enc_ct[1], &g_skip2, grads);
                let g2 = maxpool2_backward(ctx.pools_ct[0].0, &ctx.pools_ct[0].1, &g2);
                for (a, b) in g_skip1.data.iter_mut().zip(&g2.data) {
                    *a += *b;
                }
                self.enc_ct[0].backward(ps, &ctx.enc_ct[0], &g_skip1, grads);
            }
            Arch::SnetMa => {
                // Split each fused gradient into the CT / MRI streams.
                let (g_ct3, g_mri3) = match &self.att_bottleneck {
                    Some(att) => {
                        let actx = ctx.att_bottleneck.as_ref().unwrap();
                        let (dm, dc) =
                            att.backward(ps, &ctx.enc_mri_outs[2], actx, &g_bott, grads);
                        (dc, dm)
                    }
                    None => unreachable!(),
                };
                drop(g_bott);

                let (g_ct2_skip, g_mri2_skip) = if self.config.attention_at_skips {
                    let (dm, dc) = self.att_skips[1].backward(
                        ps,
                        &ctx.enc_mri_outs[1],
                        &ctx.att_skips[1],
                        &g_skip2,
                        grads,
                    );
                    (dc, dm)
                } else {
                    (g_skip2.clone(), g_skip2.clone())
                };
                let (g_ct1_skip, g_mri1_skip) = if self.config.attention_at_skips {
                    let (dm, dc) = self.att_skips[0].backward(
                        ps,
                        &ctx.enc_mri_outs[0],
                        &ctx.att_skips[0],
                        &g_skip1,
                        grads,
                    );
                    (dc, dm)
                } else {
                    (g_skip1.clone(), g_skip1.clone())
                };

                // CT encoder.
                let g3 = self.enc_ct[2].backward(ps, &ctx.enc_ct[2], &g_ct3, grads);
                drop(g_ct3);
                let g3 = maxpool2_backward(ctx.pools_ct[1].0, &ctx.pools_ct[1].1, &g3);
                let mut g2 = g_ct2_skip;
                for (a, b) in g2.data.iter_mut().zip(&g3.data) {
                    *a += *b;
                }
                let g2 = self.enc_ct[1].backward(ps, &ctx.enc_ct[1], &g2, grads);
                let g2 = maxpool2_backward(ctx.pools_ct[0].0, &ctx.pools_ct[0].1, &g2);
                let mut g1 = g_ct1_skip;
                for (a, b) in g1.data.iter_mut().zip(&g2.data) {
                    *a += *b;
                }
                self.enc_ct[0].backward(ps, &ctx.enc_ct[0], &g1, grads);

                // MRI encoder.
                let g3 = self.enc_mri[2].backward(ps, &ctx.enc_mri[2], &g_mri3, grads);
                drop(g_mri3);
                let g3 = maxpool2_backward(ctx.pools_mri[1].0, &ctx.pools_mri[1].1, &g3);
                let mut g2 = g_mri2_skip;
                for (a, b) in g2.data.iter_mut().zip(&g3.data) {
                    *a += *b;
                }
                let g2 = self.enc_mri[1].backward(ps, &ctx.enc_mri[1], &g2, grads);
                let g2 = maxpool2_backward(ctx.pools_mri[0].0, &ctx.pools_mri[0].1, &g2);
                let mut g1 = g_mri1_skip;
                for (a, b) in g1.data.iter_mut().zip(&g2.data) {
                    *a += *b;
                }
                self.enc_mri[0].backward(ps, &ctx.enc_mri[0], &g1, grads);
            }
        }
    }

    /// Inference on preprocessed volumes; returns per-voxel foreground
    /// probabilities on the input grid.
    pub fn predict_probs(
        &self,
        ps: &ParamStore<f32>,
        ct: &ScalarVolume,
        mri: Option<&ScalarVolume>,
    ) -> Result<(GridSpec, Vec<f32>), NnError> {
        if let Some(m) = mri {
            if m.grid != ct.grid {
                return Err(NnError::GridMismatch(format!(
                    "ct {:?} vs mri {:?}",
                    ct.grid, m.grid
                )));
            }
        }
        let ct_t = tensor_from_volume(ct);
        let mri_t = mri.map(tensor_from_volume);
        let (prob, _) = self.forward(ps, &ct_t, mri_t.as_ref())?;
        Ok((ct.grid, prob.data))
    }

    /// Threshold the probability output into a mask; `prob >= threshold`.
    pub fn predict_mask(
        &self,
        ps: &ParamStore<f32>,
        ct: &ScalarVolume,
        mri: Option<&ScalarVolume>,
        threshold: f64,
    ) -> Result<BinaryMask, NnError> {
        if !(threshold > 0.0 && threshold < 1.0) {
            return Err(NnError::BadThreshold(threshold));
        }
        let (grid, probs) = self.predict_probs(ps, ct, mri)?;
        let t = threshold as f32;
        let values = probs.iter().map(|&p| p >= t).collect();
        Ok(BinaryMask::new(grid, values).expect("grid matches prob volume"))
    }
}

/// Wrap a volume as a `[1,1,d,h,w]` tensor.
pub fn tensor_from_volume(vol: &ScalarVolume) -> Tensor<f32> {
    let [d, h, w] = vol.grid.shape;
    Tensor::from_vec([1, 1, d, h, w], vol.values.clone())
}

/// Wrap a mask as flat bools (z-major), matching tensor layout.
pub fn mask_to_flags(mask: &BinaryMask) -> Vec<bool> {
    mask.values.clone()
}
