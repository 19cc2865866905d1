//! Dense NCHW tensors with tape-based reverse-mode differentiation, Adam, and
//! a versioned checkpoint container.

pub mod checkpoint;
mod element;
mod error;
pub mod gradcheck;
pub mod graph;
pub mod kernels;
pub mod optim;
mod tensor;

pub use checkpoint::Checkpoint;
pub use element::Element;
pub use error::{Result, TensorError};
pub use graph::{BatchNormConfig, BatchNormMode, BatchNormStats, CustomOp, Graph, Mode, Var};
pub use optim::{adam_step, zero_grads, AdamConfig, AdamState, Parameter};
pub use tensor::Tensor;
