//! Differentiable building blocks: dense kernels (convolution, pooling,
//! resampling) and the stateful layers that the networks are made of.
//!
//! Layers cache what their backward pass needs during `forward` and
//! accumulate parameter gradients during `backward`.

mod conv;
mod gemm;
mod layers;
mod resample;

pub use conv::{
    conv2d, conv2d_backward, conv_transpose2d, conv_transpose2d_backward, max_pool2x2,
    max_pool2x2_backward, ConvGeom,
};
pub use layers::{
    Activation, BatchNorm2d, Conv2d, ConvTranspose2d, Linear, Module, Param, Phase,
};
pub use resample::BilinearUpsample;
