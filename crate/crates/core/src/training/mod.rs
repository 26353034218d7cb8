//! Objective, augmentation, optimizer and the training loop.

mod adam;
mod augment;
mod fit;
mod gradcheck;
mod loss;
mod step;

pub use adam::{AdamConfig, AdamState};
pub use augment::{augment_triplet, augment_with, fit_to_side, reflect_coord, AugmentConfig, AugmentParams};
pub use fit::{
    epoch_order, fit, latest_checkpoint, split_indices, steps_per_epoch, validate_split, Cursor, EpochRecord,
    FitOptions, StepRecord, TrainHistory, TripletSource,
};
pub use gradcheck::{gradient_check, gradient_check_single_conv, GradCheckReport, GroupError};
pub use loss::l1_loss;
pub use step::{train_step, Batch, Optimizer, TrainConfig};
