//! PPO with GAE, clipped surrogate, entropy bonus, adaptive-KL learning rate
//! and the two-stage training orchestration.

mod adam;
mod buffer;
mod gae;
mod runner;
mod update;

pub use adam::Adam;
pub use buffer::RolloutBuffer;
pub use gae::compute_gae;
pub use runner::{run_stage, EpochRecord, ObsWiring, RngState, StagePlan, Trainer, TrainingLog};
pub use update::{adapt_lr, clipped_surrogate, normalize_advantages, ppo_update, UpdateStats};

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// PPO hyperparameters. Defaults follow the reference training setup at desk
/// scale: the paper-scale batch (24 steps x 4096 envs, minibatch 8 x 4096,
/// i.e. 3 minibatches, 5 epochs) shrinks only in the environment count.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PPOConfig {
    pub steps_per_env: usize,
    pub env_count: usize,
    pub num_minibatches: usize,
    pub epochs: usize,
    pub clip: f64,
    pub entropy_coef_stage1: f64,
    pub entropy_coef_stage2: f64,
    pub gamma: f64,
    pub lam: f64,
    pub desired_kl: f64,
    pub value_loss_coef: f64,
    pub grad_clip: f64,
    pub initial_lr: f64,
    pub lr_min: f64,
    pub lr_max: f64,
}

impl Default for PPOConfig {
    fn default() -> Self {
        PPOConfig {
            steps_per_env: 24,
            env_count: 64,
            num_minibatches: 3,
            epochs: 5,
            clip: 0.2,
            entropy_coef_stage1: 0.005,
            entropy_coef_stage2: 0.002,
            gamma: 0.99,
            lam: 0.95,
            desired_kl: 0.01,
            value_loss_coef: 1.0,
            grad_clip: 1.0,
            initial_lr: 1.0e-3,
            lr_min: 1.0e-6,
            lr_max: 1.0e-2,
        }
    }
}

impl PPOConfig {
    pub fn validate(&self) -> Result<()> {
        let batch = self.steps_per_env * self.env_count;
        if batch == 0 {
            return Err(Error::config("ppo.steps_per_env/env_count", "batch must be nonempty"));
        }
        if self.num_minibatches == 0 || batch % self.num_minibatches != 0 {
            return Err(Error::config(
                "ppo.num_minibatches",
                format!("batch {batch} not divisible by {}", self.num_minibatches),
            ));
        }
        if self.epochs == 0 {
            return Err(Error::config("ppo.epochs", "must be positive"));
        }
        if !(self.clip > 0.0 && self.clip < 1.0) {
            return Err(Error::config("ppo.clip", "must be in (0, 1)"));
        }
        for (name, v) in [
            ("entropy_coef_stage1", self.entropy_coef_stage1),
            ("entropy_coef_stage2", self.entropy_coef_stage2),
        ] {
            if !(0.0..1.0).contains(&v) {
                return Err(Error::config(format!("ppo.{name}"), "must be in [0, 1)"));
            }
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(Error::config("ppo.gamma", "must be in (0, 1]"));
        }
        if !(0.0..=1.0).contains(&self.lam) {
            return Err(Error::config("ppo.lam", "must be in [0, 1]"));
        }
        if !(self.desired_kl > 0.0) {
            return Err(Error::config("ppo.desired_kl", "must be positive"));
        }
        if !(self.initial_lr > 0.0) {
            return Err(Error::config("ppo.initial_lr", "must be positive"));
        }
        if !(self.lr_min > 0.0 && self.lr_min <= self.lr_max) {
            return Err(Error::config("ppo.lr_min/lr_max", "invalid learning-rate bounds"));
        }
        Ok(())
    }

    pub fn batch_size(&self) -> usize {
        self.steps_per_env * self.env_count
    }

    pub fn minibatch_size(&self) -> usize {
        self.batch_size() / self.num_minibatches
    }

    pub fn entropy_coef(&self, stage: u8) -> f64 {
        if stage >= 2 {
            self.entropy_coef_stage2
        } else {
            self.entropy_coef_stage1
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_is_valid_and_matches_reference_values() {
        let c = PPOConfig::default();
        c.validate().unwrap();
        assert_eq!(c.epochs, 5);
        assert_eq!(c.clip, 0.2);
        assert_eq!(c.entropy_coef_stage1, 0.005);
        assert_eq!(c.entropy_coef_stage2, 0.002);
        assert_eq!(c.gamma, 0.99);
        assert_eq!(c.lam, 0.95);
        assert_eq!(c.desired_kl, 0.01);
        assert_eq!(c.steps_per_env, 24);
        assert_eq!(c.num_minibatches, 3);
    }

    #[test]
    fn batch_divisibility_is_enforced() {
        let mut c = PPOConfig::default();
        c.env_count = 7;
        c.num_minibatches = 5;
        assert!(c.validate().is_err());
    }
}
