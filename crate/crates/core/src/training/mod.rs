//! Two-stage pipeline: train the classifier on image-level labels, then train
//! the explainer GAN against the frozen classifier.

mod classifier;
mod gan;

use serde::{Deserialize, Serialize};

pub use classifier::{evaluate_classifier, train_classifier, ClassifierHistoryRow};
pub use gan::{train_gan, GanOptions, GanRun};

use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub adam_alpha: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub classifier_epochs: usize,
    pub gan_steps: usize,
    pub d_updates_per_g: usize,
    pub seed: u64,
    /// Save generator/discriminator checkpoints every this many steps (0 = only at the end).
    pub checkpoint_every: usize,
    /// Progress line every this many steps (0 = silent).
    pub log_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 16,
            adam_alpha: 2e-4,
            adam_beta1: 0.0,
            adam_beta2: 0.9,
            classifier_epochs: 30,
            gan_steps: 600,
            d_updates_per_g: 1,
            seed: 0,
            checkpoint_every: 0,
            log_every: 100,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::config("training.batch_size", "must be at least 1"));
        }
        if !(self.adam_alpha > 0.0 && self.adam_alpha.is_finite()) {
            return Err(Error::config("training.adam_alpha", "must be positive"));
        }
        for (name, b) in [("training.adam_beta1", self.adam_beta1), ("training.adam_beta2", self.adam_beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::config(name, "must lie in [0, 1)"));
            }
        }
        if self.d_updates_per_g == 0 {
            return Err(Error::config("training.d_updates_per_g", "must be at least 1"));
        }
        Ok(())
    }
}
