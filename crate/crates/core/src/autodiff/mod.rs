//! Reverse-mode differentiation over `(batch, channels, length)` tensors,
//! limited to the kernels the segmentation network needs.

mod graph;
mod tensor;

pub use graph::{sigmoid, BatchNormMode, BatchStats, Gradients, Graph, Var};
pub use tensor::{Scalar, Tensor};
