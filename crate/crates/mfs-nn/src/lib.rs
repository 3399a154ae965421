//! Differentiable building blocks and training machinery for multimodal
//! 3D segmentation: squeeze-and-excite gating, 3D deformable
//! convolution, channel-softmax modality attention, dual-encoder U-Net
//! assembly, overlap/inclusion losses, Adam optimization with modality
//! dropout, and a finite-difference gradient checker.
//!
//! Every block is generic over the element type: f32 for training and
//! inference, f64 for gradient-check mode. Forward and backward passes
//! are pure given parameters; voxel loops share the deterministic
//! parallel helpers from `mfs-core`.

pub mod augment;
pub mod blocks;
pub mod checkpoint;
pub mod error;
pub mod gradcheck;
pub mod loss;
pub mod model;
pub mod ops;
pub mod optim;
pub mod params;
pub mod preprocess;
pub mod tensor;
pub mod train;

pub use error::NnError;
pub use tensor::{Element, Tensor};
