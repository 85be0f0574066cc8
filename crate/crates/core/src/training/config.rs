use serde::{Deserialize, Serialize};

use super::AdamWConfig;
use crate::preprocess::AugmentPolicy;
use crate::{Error, Result};

/// Optimization and data-feeding settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Training stops once this many consecutive epochs have passed
    /// *after* the first non-improving one, i.e. when
    /// `epoch − best_epoch > patience`.
    pub early_stop_patience: usize,
    pub weight_decay: f64,
    pub betas: [f64; 2],
    pub eps: f64,
    pub seed: u64,
    /// Random rotation/flip of every training image each epoch.
    pub augment: bool,
    pub augment_policy: AugmentPolicy,
    /// Top up minority grades with extra copies each epoch.
    pub oversample: bool,
    /// Batch size for forward-only evaluation passes.
    pub eval_batch_size: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            batch_size: 32,
            max_epochs: 200,
            early_stop_patience: 15,
            weight_decay: 0.01,
            betas: [0.9, 0.999],
            eps: 1e-8,
            seed: 42,
            augment: true,
            augment_policy: AugmentPolicy::default(),
            oversample: true,
            eval_batch_size: 64,
        }
    }
}

impl TrainConfig {
    pub fn optimizer(&self) -> AdamWConfig {
        AdamWConfig {
            learning_rate: self.learning_rate,
            beta1: self.betas[0],
            beta2: self.betas[1],
            eps: self.eps,
            weight_decay: self.weight_decay,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.optimizer().validate()?;
        if self.batch_size == 0 || self.eval_batch_size == 0 {
            return Err(Error::invalid("batch sizes must be positive"));
        }
        if self.max_epochs == 0 {
            return Err(Error::invalid("max_epochs must be positive"));
        }
        // A patience above max_epochs is allowed: it just never triggers.
        if self.early_stop_patience == 0 {
            return Err(Error::invalid("early_stop_patience must be positive"));
        }
        if !(0.0..=1.0).contains(&self.augment_policy.flip_probability) {
            return Err(Error::invalid("flip_probability must lie in [0, 1]"));
        }
        Ok(())
    }
}
