//! Minimal reverse-mode autodiff over `f64` NCHW tensors.
//!
//! Covers what small encoder/decoder CNNs need: strided and transposed
//! convolutions lowered to GEMM, batch normalization, pointwise activations,
//! channel concatenation, batch gathering, and user-supplied custom ops whose
//! gradients are written by hand.

mod graph;
mod kernels;
mod optim;
mod tensor;

pub use graph::{sigmoid, BatchNormMode, BatchStats, CustomOp, Gradients, Graph, Var, BN_EPS};
pub use kernels::ConvGeom;
pub use optim::{Adam, AdamConfig};
pub use tensor::Tensor;
