//! Losses, parameter updates, density control and the training schedule.

pub mod adam;
pub mod densify;
pub mod loss;
pub mod train;

pub use adam::{AdamConfig, AdamState, RowAdam};
pub use densify::{densify_and_prune, DensifyConfig, DensifyOutcome, DensifyStats};
pub use loss::{dssim, image_losses, mae, smoothness, ssim, LossReport, LossWeights};
pub use train::{
    camera_extent, look_center, loss_and_grad, random_init, parameter_checksum, step_context, train, Gradients, LearningRates, LogRecord,
    OcclusionState, StepInputs, TrainConfig, TrainOutput, TrainView, Trainer,
};
