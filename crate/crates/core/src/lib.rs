//! Model-based reinforcement learning by active inference.
//!
//! A weight-uncertain dynamics model is trained by minimising variational free
//! energy; actions are chosen by a cross-entropy-method planner that scores
//! candidate action sequences by negative expected free energy (predicted
//! reward plus parameter information gain).
//!
//! The numeric core is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below fix it to `f64`, which is what the agent loop uses.

pub mod agentloop;
pub mod diffcore;
pub mod dist;
pub mod envsim;
pub mod error;
pub mod genmodel;
pub mod planner;
pub mod rng;
pub mod scalar;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Tensor = diffcore::Tensor<f64>;
pub type Tape = diffcore::Tape<f64>;
pub type DiagonalGaussian = dist::DiagonalGaussian<f64>;
pub type SampleBatch = dist::SampleBatch<f64>;
