//! Stage orchestration: rollout collection, curriculum bookkeeping, PPO
//! updates and the append-only training log.

use super::{ppo_update, Adam, PPOConfig, RolloutBuffer};
use crate::encoder::EncoderConfig;
use crate::env::{
    compute_reward, EnvConfig, RandomizationConfig, RewardWeights, RobotModel, SimEnv,
};
use crate::error::{Error, Result};
use crate::heads::{batch_from_bundles, gaussian_log_prob, ActorCriticWeights};
use crate::tensor::{Graph, Scalar};
use crate::terrain::{CurriculumState, Outcome, TerrainFamily, TerrainGenConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use std::fmt::Write as _;

/// What one training stage runs on.
#[derive(Clone, Debug, PartialEq)]
pub struct StagePlan {
    pub stage: u8,
    pub epochs: usize,
    /// Stage 1 trains the actor on privileged observations; stage 2 on noisy
    /// ones. The critic always receives privileged observations.
    pub actor_privileged: bool,
    pub families: Vec<TerrainFamily>,
    /// Pin every agent to one difficulty level and disable curriculum moves.
    pub fixed_level: Option<u8>,
    /// Checkpoint cadence in epochs; 0 saves only the final state.
    pub checkpoint_every: usize,
}

impl StagePlan {
    pub fn stage1(profile: crate::terrain::RobotProfile, epochs: usize) -> Self {
        StagePlan {
            stage: 1,
            epochs,
            actor_privileged: true,
            families: TerrainFamily::base_set(profile).to_vec(),
            fixed_level: None,
            checkpoint_every: 0,
        }
    }

    pub fn stage2(profile: crate::terrain::RobotProfile, epochs: usize) -> Self {
        let mut families = TerrainFamily::base_set(profile).to_vec();
        families.extend_from_slice(TerrainFamily::finetune_set(profile));
        StagePlan {
            stage: 2,
            epochs,
            actor_privileged: false,
            families,
            fixed_level: None,
            checkpoint_every: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.stage == 1 || self.stage == 2) {
            return Err(Error::config("stage.stage", "stage must be 1 or 2"));
        }
        if self.families.is_empty() {
            return Err(Error::config("stage.families", "at least one terrain family"));
        }
        if let Some(l) = self.fixed_level {
            if l > 9 {
                return Err(Error::config("stage.fixed_level", "level outside 0..=9"));
            }
        }
        Ok(())
    }
}

/// Counters of which observation variant each head received.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ObsWiring {
    pub actor_privileged: u64,
    pub actor_noisy: u64,
    pub critic_privileged: u64,
    pub critic_noisy: u64,
}

/// One line of the training log.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub mean_total: f64,
    /// Mean weighted contribution per reward term over the rollout.
    pub reward_terms: Vec<(String, f64)>,
    pub terrain_level: f64,
    pub kl: f64,
    pub lr: f64,
    pub clip_fraction: f64,
    pub episodes: u64,
    pub solved: u64,
    pub faults: u64,
}

impl EpochRecord {
    /// Deterministic single-line rendering with a fixed key order.
    pub fn to_line(&self) -> String {
        let mut s = String::new();
        let _ = write!(s, "epoch={} total={}", self.epoch, self.mean_total);
        for (name, v) in &self.reward_terms {
            let _ = write!(s, " r/{name}={v}");
        }
        let _ = write!(
            s,
            " terrain_level={} kl={} lr={} clip_fraction={} episodes={} solved={} faults={}",
            self.terrain_level, self.kl, self.lr, self.clip_fraction, self.episodes, self.solved, self.faults
        );
        s
    }

    /// Mean weighted contribution of one reward term.
    pub fn term(&self, name: &str) -> Option<f64> {
        self.reward_terms.iter().find(|(n, _)| n == name).map(|(_, v)| *v)
    }
}

/// Records plus wiring counters for a completed stage.
#[derive(Clone, Debug, Default)]
pub struct TrainingLog {
    pub records: Vec<EpochRecord>,
    pub wiring: ObsWiring,
}

impl TrainingLog {
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&r.to_line());
            out.push('\n');
        }
        out
    }
}

/// Everything one training stage needs, with deterministic RNG streams
/// derived from the master seed.
pub struct Trainer<T: Scalar> {
    pub weights: ActorCriticWeights<T>,
    pub adam: Adam<T>,
    pub lr: f64,
    pub ppo_cfg: PPOConfig,
    pub env_cfg: EnvConfig,
    pub rand_cfg: RandomizationConfig,
    pub reward_weights: RewardWeights,
    pub plan: StagePlan,
    pub model: RobotModel,
    pub epoch: usize,
    pub wiring: ObsWiring,
    envs: Vec<SimEnv>,
    curricula: Vec<CurriculumState>,
    action_rng: ChaCha8Rng,
    shuffle_rng: ChaCha8Rng,
    enc_cfg: EncoderConfig,
}

impl<T: Scalar> Trainer<T> {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        weights: ActorCriticWeights<T>,
        model: RobotModel,
        ppo_cfg: PPOConfig,
        env_cfg: EnvConfig,
        terrain_cfg: TerrainGenConfig,
        rand_cfg: RandomizationConfig,
        reward_weights: RewardWeights,
        plan: StagePlan,
        master_seed: u64,
    ) -> Result<Self> {
        ppo_cfg.validate()?;
        env_cfg.validate()?;
        rand_cfg.validate()?;
        plan.validate()?;
        let enc_cfg = weights.encoder.config().clone();
        if enc_cfg.proprio_dim != model.proprio_dim() {
            return Err(Error::config(
                "encoder.proprio_dim",
                format!(
                    "encoder expects {}, robot produces {}",
                    enc_cfg.proprio_dim,
                    model.proprio_dim()
                ),
            ));
        }
        if weights.policy_cfg.action_dim != model.joint_count {
            return Err(Error::config(
                "policy.action_dim",
                format!(
                    "policy outputs {}, robot has {} joints",
                    weights.policy_cfg.action_dim, model.joint_count
                ),
            ));
        }

        let mut setup_rng = ChaCha8Rng::seed_from_u64(master_seed.wrapping_add(7));
        let mut envs = Vec::with_capacity(ppo_cfg.env_count);
        let mut curricula = Vec::with_capacity(ppo_cfg.env_count);
        for e in 0..ppo_cfg.env_count {
            let family = plan.families[e % plan.families.len()];
            let level = plan
                .fixed_level
                .unwrap_or_else(|| setup_rng.gen_range(0..=9));
            let cur = CurriculumState::new(
                family,
                level,
                master_seed.wrapping_add(2000).wrapping_add(e as u64),
            );
            let mut env = SimEnv::new(
                model.clone(),
                env_cfg.clone(),
                terrain_cfg.clone(),
                master_seed.wrapping_add(1000).wrapping_add(e as u64),
            )?;
            env.reset(&cur, &rand_cfg)?;
            envs.push(env);
            curricula.push(cur);
        }

        let shapes: Vec<Vec<usize>> = weights
            .named_tensors()
            .iter()
            .map(|(_, t)| t.shape().to_vec())
            .collect();
        Ok(Trainer {
            weights,
            adam: Adam::new(&shapes),
            lr: ppo_cfg.initial_lr,
            ppo_cfg,
            env_cfg,
            rand_cfg,
            reward_weights,
            plan,
            model,
            epoch: 0,
            wiring: ObsWiring::default(),
            envs,
            curricula,
            action_rng: ChaCha8Rng::seed_from_u64(master_seed.wrapping_add(1)),
            shuffle_rng: ChaCha8Rng::seed_from_u64(master_seed.wrapping_add(2)),
            enc_cfg,
        })
    }

    pub fn envs(&self) -> &[SimEnv] {
        &self.envs
    }

    pub fn curricula(&self) -> &[CurriculumState] {
        &self.curricula
    }

    pub fn encoder_config(&self) -> &EncoderConfig {
        &self.enc_cfg
    }

    pub fn mean_terrain_level(&self) -> f64 {
        self.curricula.iter().map(|c| f64::from(c.level)).sum::<f64>()
            / self.curricula.len().max(1) as f64
    }

    /// RNG snapshots for checkpointing: (action, shuffle, per-env streams).
    pub fn rng_snapshot(&self) -> (RngState, RngState, Vec<RngState>) {
        let env_states = self
            .envs
            .iter()
            .map(|e| RngState {
                seed: e.rng_seed_bytes(),
                word_pos: e.rng_state().1,
            })
            .collect();
        (
            RngState {
                seed: self.action_rng.get_seed(),
                word_pos: self.action_rng.get_word_pos(),
            },
            RngState {
                seed: self.shuffle_rng.get_seed(),
                word_pos: self.shuffle_rng.get_word_pos(),
            },
            env_states,
        )
    }

    pub fn restore_rngs(&mut self, action: RngState, shuffle: RngState, envs: Vec<RngState>) {
        self.action_rng = action.to_rng();
        self.shuffle_rng = shuffle.to_rng();
        for (env, st) in self.envs.iter_mut().zip(envs) {
            env.restore_rng(st.seed, st.word_pos);
        }
    }

    pub fn restore_curricula(&mut self, curricula: Vec<CurriculumState>) -> Result<()> {
        if curricula.len() != self.curricula.len() {
            return Err(Error::Checkpoint(format!(
                "checkpoint has {} curriculum entries, run uses {}",
                curricula.len(),
                self.curricula.len()
            )));
        }
        // re-seat every environment on its restored tile assignment
        self.curricula = curricula;
        for (env, cur) in self.envs.iter_mut().zip(self.curricula.iter()) {
            env.reset(cur, &self.rand_cfg)?;
        }
        Ok(())
    }

    /// One training epoch: a full rollout followed by a PPO update.
    pub fn run_epoch(&mut self) -> Result<EpochRecord> {
        let steps = self.ppo_cfg.steps_per_env;
        let n_envs = self.ppo_cfg.env_count;
        let action_dim = self.weights.policy_cfg.action_dim;
        let episode_steps = self.env_cfg.episode_steps();
        let std = self.weights.action_std();

        let mut buffer = RolloutBuffer::new(steps, n_envs, action_dim);
        buffer.old_std = std.clone();

        let mut term_sums: Vec<(String, f64)> = self
            .reward_weights
            .weights
            .iter()
            .filter(|(name, _)| {
                // stage-1 logs omit the stage-2-only rows
                self.plan.stage >= 2 || !name.starts_with("standing_")
            })
            .map(|(name, _)| (name.clone(), 0.0))
            .collect();
        let mut total_sum = 0.0f64;
        let mut episodes = 0u64;
        let mut solved = 0u64;
        let mut faults = 0u64;

        for _ in 0..steps {
            // observations for every environment
            let mut actor_obs = Vec::with_capacity(n_envs);
            let mut critic_obs = Vec::with_capacity(n_envs);
            for env in &mut self.envs {
                env.apply_push(&self.rand_cfg);
                let a = env.observe(&self.enc_cfg, &self.rand_cfg, self.plan.actor_privileged)?;
                let c = env.observe(&self.enc_cfg, &self.rand_cfg, true)?;
                if a.privileged {
                    self.wiring.actor_privileged += 1;
                } else {
                    self.wiring.actor_noisy += 1;
                }
                if c.privileged {
                    self.wiring.critic_privileged += 1;
                } else {
                    self.wiring.critic_noisy += 1;
                }
                actor_obs.push(a);
                critic_obs.push(c);
            }

            // batched policy inference
            let (means, values) = {
                let g = Graph::new();
                let vars = self.weights.bind(&g, false);
                let actor_refs: Vec<&crate::env::ObservationBundle> = actor_obs.iter().collect();
                let critic_refs: Vec<&crate::env::ObservationBundle> = critic_obs.iter().collect();
                let (a_scans, a_prop) = batch_from_bundles::<T>(&actor_refs, &self.enc_cfg)?;
                let (c_scans, c_prop) = batch_from_bundles::<T>(&critic_refs, &self.enc_cfg)?;
                let (mean_var, _) = vars.actor_mean(&g, g.constant(a_scans), g.constant(a_prop))?;
                let value_var = vars.critic_value(&g, g.constant(c_scans), g.constant(c_prop))?;
                let means: Vec<f64> = g.value(mean_var).data().iter().map(|v| v.as_f64()).collect();
                let values: Vec<f64> = g.value(value_var).data().iter().map(|v| v.as_f64()).collect();
                (means, values)
            };

            for e in 0..n_envs {
                let mean = &means[e * action_dim..(e + 1) * action_dim];
                let action: Vec<f64> = mean
                    .iter()
                    .zip(std.iter())
                    .map(|(m, s)| {
                        let eps: f64 = StandardNormal.sample(&mut self.action_rng);
                        m + s * eps
                    })
                    .collect();
                let log_prob = gaussian_log_prob(&action, mean, &std);

                let env = &mut self.envs[e];
                let prev_state = env.state.clone();
                let info = env.step(&action);
                let breakdown = compute_reward(
                    &prev_state,
                    &env.state,
                    &action,
                    &info,
                    &self.model,
                    &self.reward_weights,
                    self.plan.stage,
                );
                total_sum += breakdown.total;
                for (name, v) in &breakdown.terms {
                    if let Some(slot) = term_sums.iter_mut().find(|(n, _)| n == name) {
                        slot.1 += v;
                    }
                }

                let timeout = env.state.step_count >= episode_steps;
                let done = info.terminated || info.walked_out || info.fault || timeout;
                buffer.push(
                    actor_obs[e].clone(),
                    critic_obs[e].clone(),
                    &action,
                    mean,
                    log_prob,
                    values[e],
                    breakdown.total,
                    done,
                )?;

                if done {
                    episodes += 1;
                    if info.walked_out {
                        solved += 1;
                    }
                    if info.fault {
                        // faulted episodes are excluded from the curriculum
                        faults += 1;
                    } else if self.plan.fixed_level.is_none() {
                        self.curricula[e].update(if info.walked_out {
                            Outcome::Solved
                        } else {
                            Outcome::NotSolved
                        });
                    }
                    let cur = self.curricula[e].clone();
                    self.envs[e].reset(&cur, &self.rand_cfg)?;
                }
            }
        }

        // bootstrap values from the post-rollout states
        {
            let mut final_obs = Vec::with_capacity(n_envs);
            for env in &mut self.envs {
                let c = env.observe(&self.enc_cfg, &self.rand_cfg, true)?;
                self.wiring.critic_privileged += 1;
                final_obs.push(c);
            }
            let g = Graph::new();
            let vars = self.weights.bind(&g, false);
            let refs: Vec<&crate::env::ObservationBundle> = final_obs.iter().collect();
            let (scans, prop) = batch_from_bundles::<T>(&refs, &self.enc_cfg)?;
            let value_var = vars.critic_value(&g, g.constant(scans), g.constant(prop))?;
            let values = g.value(value_var);
            for (e, v) in values.data().iter().enumerate() {
                buffer.bootstrap[e] = v.as_f64();
            }
        }

        let stats = ppo_update(
            &buffer,
            &mut self.weights,
            &mut self.adam,
            &self.ppo_cfg,
            self.plan.stage,
            &mut self.lr,
            &mut self.shuffle_rng,
        )?;

        let samples = (steps * n_envs) as f64;
        let record = EpochRecord {
            epoch: self.epoch,
            mean_total: total_sum / samples,
            reward_terms: term_sums
                .into_iter()
                .map(|(n, s)| (n, s / samples))
                .collect(),
            terrain_level: self.mean_terrain_level(),
            kl: stats.mean_kl,
            lr: self.lr,
            clip_fraction: stats.clip_fraction,
            episodes,
            solved,
            faults,
        };
        self.epoch += 1;
        Ok(record)
    }
}

/// Serializable ChaCha stream state.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RngState {
    pub seed: [u8; 32],
    pub word_pos: u128,
}

impl RngState {
    pub fn to_rng(self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::from_seed(self.seed);
        rng.set_word_pos(self.word_pos);
        rng
    }
}

/// Run a full stage, invoking `on_epoch` after every epoch (for logging and
/// checkpoint cadence).
pub fn run_stage<T: Scalar>(
    trainer: &mut Trainer<T>,
    mut on_epoch: impl FnMut(&Trainer<T>, &EpochRecord) -> Result<()>,
) -> Result<TrainingLog> {
    let mut log = TrainingLog::default();
    for _ in 0..trainer.plan.epochs {
        let record = trainer.run_epoch()?;
        on_epoch(trainer, &record)?;
        log.records.push(record);
    }
    log.wiring = trainer.wiring;
    Ok(log)
}
