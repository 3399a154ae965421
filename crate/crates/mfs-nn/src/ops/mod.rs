//! Differentiable primitive operations. Forward functions return output
//! tensors (plus whatever the backward pass needs); backward functions
//! take the saved context and the output gradient and return input
//! gradients, accumulating parameter gradients in place.

pub mod conv;
pub mod norm;
pub mod reduce;
pub mod simple;

pub use conv::{conv3d_backward, conv3d_forward, he_bound, ConvDims};
pub use norm::{instance_norm_backward, instance_norm_forward, InstanceNormCtx, NORM_EPS};
pub use reduce::{dot8, dot_shifted8, sum8};
pub use simple::{
    channel_softmax, channel_softmax_backward, concat_channels, gap_backward, gap_forward,
    maxpool2_backward, maxpool2_forward, relu_backward, relu_forward, sigmoid_backward,
    sigmoid_forward, split_channels, upsample2_backward, upsample2_forward, ChanVec,
};
