//! Dense tensors, a reverse-mode tape, and an adaptive-moment optimizer.

pub mod checkpoint;
pub mod optim;
pub mod tape;
pub mod tensor;

pub use checkpoint::{Checkpoint, NamedTensor, OptimizerRecord};
pub use optim::{AdamConfig, OptimizerState};
pub use tape::{affine, Gradients, Tape, Var};
pub use tensor::Tensor;
