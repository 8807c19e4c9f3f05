//! Small dense networks with hand-written gradients and an Adam optimizer.

mod adam;
mod mlp;

pub use adam::{AdamConfig, OptimState};
pub use mlp::{mse_loss, Cache, Gradient, Head, Mlp3, TrainBatch};
