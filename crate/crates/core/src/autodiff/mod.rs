//! Minimal reverse-mode automatic differentiation over dense `f64` tensors.
//!
//! Only the primitives a small convolutional encoder/decoder needs are
//! provided. Image operations take rank-3 `C×H×W` tensors; batches are
//! handled by running one graph per sample and accumulating gradients.

mod conv;
pub mod gradcheck;
mod graph;
pub mod optim;
mod tensor;

pub use conv::Padding;
pub use gradcheck::{grad_check, GradCheckReport};
pub use graph::{Graph, Var};
pub use optim::{adamw_step, AdamWConfig, OptimizerState};
pub use tensor::Tensor;
