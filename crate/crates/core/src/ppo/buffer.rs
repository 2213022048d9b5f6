//! Fixed-capacity rollout storage for PPO.

use crate::env::ObservationBundle;
use crate::error::{Error, Result};

/// Time-major storage: index `t * env_count + e`.
pub struct RolloutBuffer {
    pub steps: usize,
    pub env_count: usize,
    pub actor_obs: Vec<ObservationBundle>,
    pub critic_obs: Vec<ObservationBundle>,
    pub actions: Vec<f64>,
    pub action_dim: usize,
    pub log_probs: Vec<f64>,
    /// Action means at collection time, for the analytic KL.
    pub means: Vec<f64>,
    /// Per-dimension std at collection time (state-independent).
    pub old_std: Vec<f64>,
    pub values: Vec<f64>,
    pub rewards: Vec<f64>,
    pub dones: Vec<bool>,
    /// Critic value of the state after the final step, per environment.
    pub bootstrap: Vec<f64>,
}

impl RolloutBuffer {
    pub fn new(steps: usize, env_count: usize, action_dim: usize) -> Self {
        let n = steps * env_count;
        RolloutBuffer {
            steps,
            env_count,
            actor_obs: Vec::with_capacity(n),
            critic_obs: Vec::with_capacity(n),
            actions: Vec::with_capacity(n * action_dim),
            action_dim,
            log_probs: Vec::with_capacity(n),
            means: Vec::with_capacity(n * action_dim),
            old_std: Vec::new(),
            values: Vec::with_capacity(n),
            rewards: Vec::with_capacity(n),
            dones: Vec::with_capacity(n),
            bootstrap: vec![0.0; env_count],
        }
    }

    pub fn capacity(&self) -> usize {
        self.steps * self.env_count
    }

    pub fn len(&self) -> usize {
        self.log_probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.log_probs.is_empty()
    }

    pub fn is_full(&self) -> bool {
        self.len() == self.capacity()
    }

    #[allow(clippy::too_many_arguments)]
    pub fn push(
        &mut self,
        actor_obs: ObservationBundle,
        critic_obs: ObservationBundle,
        action: &[f64],
        mean: &[f64],
        log_prob: f64,
        value: f64,
        reward: f64,
        done: bool,
    ) -> Result<()> {
        if self.is_full() {
            return Err(Error::shape("rollout_buffer", "push into a full buffer".to_string()));
        }
        if action.len() != self.action_dim || mean.len() != self.action_dim {
            return Err(Error::shape(
                "rollout_buffer",
                format!("action dim {} vs configured {}", action.len(), self.action_dim),
            ));
        }
        self.actor_obs.push(actor_obs);
        self.critic_obs.push(critic_obs);
        self.actions.extend_from_slice(action);
        self.means.extend_from_slice(mean);
        self.log_probs.push(log_prob);
        self.values.push(value);
        self.rewards.push(reward);
        self.dones.push(done);
        Ok(())
    }

    pub fn clear(&mut self) {
        self.actor_obs.clear();
        self.critic_obs.clear();
        self.actions.clear();
        self.means.clear();
        self.log_probs.clear();
        self.values.clear();
        self.rewards.clear();
        self.dones.clear();
    }

    pub fn action(&self, idx: usize) -> &[f64] {
        &self.actions[idx * self.action_dim..(idx + 1) * self.action_dim]
    }

    pub fn mean(&self, idx: usize) -> &[f64] {
        &self.means[idx * self.action_dim..(idx + 1) * self.action_dim]
    }
}
