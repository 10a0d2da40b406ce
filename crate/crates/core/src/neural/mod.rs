//! Gradient-input networks, the phase regulator, Adam, and reverse-mode
//! gradients through one unrolled outer iteration.

mod adam;
mod mlp;
mod regulator;
pub mod trajectory;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use mlp::{mlp_backward, mlp_forward, Dense, MlpParams};
pub use regulator::{regulator, regulator_derivative, RegulatorSpec};
pub use trajectory::{trajectory_grads, TrajectoryGrads};
