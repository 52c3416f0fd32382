//! Optimisation: Adam, augmentation, the composite loss and the epoch loop.

pub mod adam;
pub mod augment;
mod harness;
mod loss;

pub use adam::{AdamConfig, AdamState};
pub use augment::{augment, flip_horizontal, rotate, swap_view_columns, AugmentationConfig};
pub use harness::{
    argmax, calibrate, correct_predictions, evaluate, fit, train_epoch, EpochMetrics, EpochOptions, EpochRecord, Evaluation,
    training_rng, TrainConfig, DEFAULT_BATCH_SIZE, DEFAULT_EPOCHS, DEFAULT_LAMBDA,
};
pub use loss::{composite_loss, CompositeLoss, LossBreakdown};
