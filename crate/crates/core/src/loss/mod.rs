//! Training objectives and evaluation metrics.

mod labels;
mod losses;
pub mod metrics;

pub use labels::LabelVolume;
pub use losses::{
    cross_entropy, deep_supervision_loss, deep_supervision_weights, dice_from_probs, joint_loss, soft_dice_loss,
    LossConfig,
};
