//! Deployment-style evaluation: episode classification, velocity-tracking
//! error and per-family rate tables.
//!
//! An episode is a failure if any undesirable contact (collision) or
//! termination occurred, a success if the base crossed the tile border
//! before timeout, and stuck otherwise. The three labels partition every
//! complete episode.

mod attention;

pub use attention::{
    export_attention, read_attention_frames, write_attention_frames, AttentionFrame,
};

use crate::encoder::EncoderConfig;
use crate::env::{
    compute_reward, EnvConfig, EpisodeTrace, ObservationBundle, RandomizationConfig,
    RewardWeights, RobotModel, SimEnv, TraceStep,
};
use crate::error::{Error, Result};
use crate::heads::{act, ActorCriticWeights};
use crate::tensor::Scalar;
use crate::terrain::{CurriculumState, TerrainFamily, TerrainGenConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::fmt::Write as _;

/// Mutually exclusive and exhaustive episode labels.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EpisodeLabel {
    Success,
    Failure,
    Stuck,
}

impl EpisodeLabel {
    pub fn as_str(self) -> &'static str {
        match self {
            EpisodeLabel::Success => "success",
            EpisodeLabel::Failure => "failure",
            EpisodeLabel::Stuck => "stuck",
        }
    }
}

/// Classification of one complete episode.
#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeOutcome {
    pub label: EpisodeLabel,
    pub length: usize,
    /// Per-step velocity-tracking errors over the surviving prefix.
    pub tracking_errors: Vec<f64>,
}

/// Pure function of the trace. Failure takes precedence over success.
pub fn classify_episode(trace: &EpisodeTrace) -> Result<EpisodeOutcome> {
    if !trace.complete {
        return Err(Error::Eval("truncated trace: episode did not finish".into()));
    }
    let mut label = EpisodeLabel::Stuck;
    let mut failed_at = None;
    let mut walked_out = false;
    for (i, s) in trace.steps.iter().enumerate() {
        if s.terminated || s.collided {
            failed_at = Some(i);
            break;
        }
        if s.walked_out {
            walked_out = true;
            break;
        }
    }
    if failed_at.is_some() {
        label = EpisodeLabel::Failure;
    } else if walked_out {
        label = EpisodeLabel::Success;
    }
    let surviving = failed_at.unwrap_or(trace.steps.len());
    let tracking_errors = trace.steps[..surviving]
        .iter()
        .map(|s| {
            let ex = s.command[0] - s.lin_vel[0];
            let ey = s.command[1] - s.lin_vel[1];
            (ex * ex + ey * ey).sqrt()
        })
        .collect();
    Ok(EpisodeOutcome {
        label,
        length: trace.steps.len(),
        tracking_errors,
    })
}

/// Mean tracking error over the surviving steps; absent when nothing
/// survived.
pub fn tracking_error(outcome: &EpisodeOutcome) -> Option<f64> {
    if outcome.tracking_errors.is_empty() {
        return None;
    }
    Some(outcome.tracking_errors.iter().sum::<f64>() / outcome.tracking_errors.len() as f64)
}

/// Per-family evaluation results.
#[derive(Clone, Debug, PartialEq)]
pub struct RateRow {
    pub family: TerrainFamily,
    pub level: u8,
    pub episodes: usize,
    pub success: f64,
    pub failure: f64,
    pub stuck: f64,
    /// Mean tracking error of surviving agents, absent when all failed
    /// immediately.
    pub tracking_error: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RateTable {
    pub rows: Vec<RateRow>,
}

impl RateTable {
    /// Delimiter-separated rendering with a fixed column order.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str("rate_table v1\n");
        out.push_str("columns family level episodes success failure stuck tracking_error\n");
        for r in &self.rows {
            let err = match r.tracking_error {
                Some(e) => format!("{e}"),
                None => "absent".to_string(),
            };
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t{}\t{}\t{}\t{}",
                r.family.as_str(),
                r.level,
                r.episodes,
                r.success,
                r.failure,
                r.stuck,
                err
            );
        }
        out.push_str("end\n");
        out
    }
}

/// Action source for an evaluation episode.
pub enum EvalPolicy<'a, T: Scalar> {
    /// Deterministic (mean) actions from a trained policy.
    Trained(&'a ActorCriticWeights<T>),
    /// Uniform random actions in [-1, 1]; the baseline.
    Random,
}

/// Run one episode with the given action source and record its trace.
#[allow(clippy::too_many_arguments)]
pub fn run_episode<T: Scalar>(
    env: &mut SimEnv,
    enc_cfg: &EncoderConfig,
    rand_cfg: &RandomizationConfig,
    reward_weights: &RewardWeights,
    stage: u8,
    policy: &EvalPolicy<'_, T>,
    policy_rng: &mut ChaCha8Rng,
) -> Result<EpisodeTrace> {
    let timeout = env.cfg.episode_steps();
    let term_names: Vec<String> = reward_weights
        .weights
        .iter()
        .filter(|(n, _)| stage >= 2 || !n.starts_with("standing_"))
        .map(|(n, _)| n.clone())
        .collect();
    let mut trace = EpisodeTrace::new(term_names.clone(), timeout);
    let action_dim = env.model.joint_count;
    loop {
        let obs: ObservationBundle = env.observe(enc_cfg, rand_cfg, false)?;
        let action: Vec<f64> = match policy {
            EvalPolicy::Trained(weights) => {
                let (a, _, _) = act(&obs, weights, false, policy_rng)?;
                a.data().iter().map(|v| v.as_f64()).collect()
            }
            EvalPolicy::Random => (0..action_dim)
                .map(|_| policy_rng.gen_range(-1.0..1.0))
                .collect(),
        };
        let prev = env.state.clone();
        let info = env.step(&action);
        let breakdown = compute_reward(&prev, &env.state, &action, &info, &env.model, reward_weights, stage);
        let reward_terms: Vec<f64> = term_names
            .iter()
            .map(|n| breakdown.term(n).unwrap_or(0.0))
            .collect();
        let s = &env.state;
        trace.steps.push(TraceStep {
            step: s.step_count,
            base: s.base_pos,
            yaw: s.yaw,
            lin_vel: [s.base_lin_vel[0], s.base_lin_vel[1]],
            command: s.command,
            reward_total: breakdown.total,
            reward_terms,
            terminated: info.terminated,
            collided: info.collisions > 0,
            zero_contact: info.zero_contact,
            walked_out: info.walked_out,
        });
        let timeout_hit = s.step_count >= timeout;
        if info.terminated || info.fault || info.walked_out || timeout_hit {
            trace.complete = true;
            return Ok(trace);
        }
    }
}

/// Evaluate a policy over terrain families; deterministic given the seed.
#[allow(clippy::too_many_arguments)]
pub fn evaluate_suite<T: Scalar>(
    policy: &EvalPolicy<'_, T>,
    model: &RobotModel,
    enc_cfg: &EncoderConfig,
    env_cfg: &EnvConfig,
    terrain_cfg: &TerrainGenConfig,
    rand_cfg: &RandomizationConfig,
    reward_weights: &RewardWeights,
    families: &[TerrainFamily],
    level: u8,
    episodes: usize,
    seed: u64,
) -> Result<RateTable> {
    let mut rows = Vec::with_capacity(families.len());
    for (fi, &family) in families.iter().enumerate() {
        let mut success = 0usize;
        let mut failure = 0usize;
        let mut stuck = 0usize;
        let mut tracking_sum = 0.0f64;
        let mut tracking_count = 0usize;
        for ep in 0..episodes {
            let ep_seed = seed
                .wrapping_mul(0x9E37_79B9_7F4A_7C15)
                .wrapping_add((fi as u64) << 32)
                .wrapping_add(ep as u64);
            let mut env = SimEnv::new(model.clone(), env_cfg.clone(), terrain_cfg.clone(), ep_seed)?;
            let cur = CurriculumState::new(family, level, ep_seed);
            env.reset(&cur, rand_cfg)?;
            let mut policy_rng = ChaCha8Rng::seed_from_u64(ep_seed ^ 0x5151_5151);
            let trace = run_episode(
                &mut env,
                enc_cfg,
                rand_cfg,
                reward_weights,
                2,
                policy,
                &mut policy_rng,
            )?;
            let outcome = classify_episode(&trace)?;
            match outcome.label {
                EpisodeLabel::Success => success += 1,
                EpisodeLabel::Failure => failure += 1,
                EpisodeLabel::Stuck => stuck += 1,
            }
            if outcome.label != EpisodeLabel::Failure {
                if let Some(err) = tracking_error(&outcome) {
                    tracking_sum += err;
                    tracking_count += 1;
                }
            }
        }
        let n = episodes as f64;
        rows.push(RateRow {
            family,
            level,
            episodes,
            success: success as f64 / n,
            failure: failure as f64 / n,
            stuck: stuck as f64 / n,
            tracking_error: (tracking_count > 0).then(|| tracking_sum / tracking_count as f64),
        });
    }
    Ok(RateTable { rows })
}
