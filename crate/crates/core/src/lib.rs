//! Deep capsule networks with residual connections between capsule layers.
//!
//! * [`tensor`]: tensors and tape-based reverse-mode autodiff.
//! * [`routing`]: routing-by-agreement, scaled-distance-agreement and EM routing.
//! * [`layers`]: capsule layers, residual blocks, the depth-parameterized model and checkpoints.
//! * [`loss`], [`optim`]: margin/reconstruction losses and Adam.
//! * [`data`]: IDX and canonical containers, augmentation, batching.
//! * [`experiment`]: training, evaluation, sweeps, gradient checks and plot data.

pub mod data;
pub mod error;
pub mod experiment;
pub mod layers;
pub mod loss;
pub mod optim;
pub mod routing;
pub mod tensor;

pub use error::{Error, Result};
