//! Composite differentiable blocks: squeeze-and-excite channel gating,
//! 3D deformable convolution, the modality attention fusion block, and
//! the conv/norm/ReLU block the encoders and decoder are built from.

pub mod attention;
pub mod convblock;
pub mod deform;
pub mod se;

pub use attention::{ModalityAttention, ModalityAttentionCtx};
pub use convblock::{ConvBlock, ConvBlockCtx};
pub use deform::{DeformConv3d, DeformCtx};
pub use se::{SeBlock, SeCtx};
