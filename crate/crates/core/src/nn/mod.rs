//! Tensors and differentiable layer kernels: convolution, transposed
//! convolution, nearest upsampling (plus the fused upsample-conv block the
//! decoder uses), batch normalization, dropout, and activations — each with
//! an analytic backward pass verified against central differences.

pub mod gradcheck;
pub mod linalg;
pub mod ops;
pub mod tensor;

pub use tensor::{Scalar, Tensor4};
