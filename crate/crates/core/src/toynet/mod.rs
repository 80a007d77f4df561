//! Desk-scale binary autoencoder with hand-written gradients.

pub mod checkpoint;
pub mod layers;
pub mod loss;
pub mod model;
pub mod schedule;
pub mod train;

#[cfg(test)]
mod gradcheck;

pub use layers::{heaviside_backward, heaviside_forward, surrogate_derivative};
pub use model::{ForwardOutput, ModelConfig, MuPlacement, ToyAutoencoder, Variant, MU_LEVELS};
pub use schedule::GammaSchedule;
pub use train::{
    evaluate, metrics_csv, mu_select, train, train_with_progress, Evaluation, MuSelection, StepMetrics, TrainConfig,
};
