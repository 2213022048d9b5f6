//! Run configuration: one TOML document describing a complete training or
//! evaluation run. Unknown keys are rejected and every field is validated
//! before a run starts; parse errors always name the offending field.

use crate::encoder::{Encoder, EncoderConfig, EncoderKind};
use crate::env::{EnvConfig, RandomizationConfig, RewardWeights, RobotModel};
use crate::error::{Error, Result};
use crate::heads::{ActorCriticWeights, HeadInput, PolicyConfig};
use crate::ppo::{PPOConfig, StagePlan};
use crate::tensor::Scalar;
use crate::terrain::{RobotProfile, TerrainFamily, TerrainGenConfig};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    pub robot: RobotProfile,
    /// primary | transformer | cnn-downsample | vit
    pub encoder: String,
    pub master_seed: u64,
    pub out_dir: String,
}

impl Default for RunSection {
    fn default() -> Self {
        RunSection {
            robot: RobotProfile::Quadruped,
            encoder: "primary".to_string(),
            master_seed: 0,
            out_dir: "runs/default".to_string(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderSection {
    pub length: usize,
    pub width: usize,
    pub dim: usize,
    pub heads: usize,
    pub query_len: usize,
    pub scan_resolution: f64,
}

impl Default for EncoderSection {
    fn default() -> Self {
        EncoderSection {
            length: 9,
            width: 7,
            dim: 16,
            heads: 4,
            query_len: 1,
            scan_resolution: 0.1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PolicySection {
    pub hidden: usize,
    pub head_input: HeadInput,
    pub init_log_std: f64,
    pub per_joint_log_std: bool,
}

impl Default for PolicySection {
    fn default() -> Self {
        PolicySection {
            hidden: 64,
            head_input: HeadInput::Concat,
            init_log_std: 0.0,
            per_joint_log_std: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StageSection {
    pub epochs: usize,
    pub checkpoint_every: usize,
    /// Pin every agent to one level and freeze the curriculum.
    pub fixed_level: Option<u8>,
    /// Override the terrain family set for this stage.
    pub families: Option<Vec<String>>,
}

impl Default for StageSection {
    fn default() -> Self {
        StageSection {
            epochs: 100,
            checkpoint_every: 0,
            fixed_level: None,
            families: None,
        }
    }
}

/// Whole-run configuration, mirrored one-to-one by the TOML schema file.
#[derive(Clone, Debug, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub run: RunSection,
    pub encoder: EncoderSection,
    pub policy: PolicySection,
    pub ppo: PPOConfig,
    pub env: EnvConfig,
    pub randomization: RandomizationConfig,
    pub terrain: TerrainGenConfig,
    pub stage1: StageSection,
    pub stage2: StageSection,
    /// Reward-weight overrides by term name.
    pub reward: BTreeMap<String, f64>,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text)
            .map_err(|e| Error::config("config", e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text)
    }

    /// Canonical serialization, stored verbatim inside checkpoints.
    pub fn canonical_text(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let _ = EncoderKind::parse(&self.run.encoder)?;
        self.encoder_config().validate()?;
        self.policy_config().validate()?;
        self.ppo.validate()?;
        self.env.validate()?;
        self.randomization.validate()?;
        self.terrain.validate()?;
        for stage in [1u8, 2] {
            self.stage_plan(stage)?.validate()?;
        }
        let defaults = RewardWeights::defaults(self.run.robot);
        for name in self.reward.keys() {
            if defaults.get(name).is_none() {
                return Err(Error::config(
                    format!("reward.{name}"),
                    "unknown reward term for this robot",
                ));
            }
        }
        Ok(())
    }

    pub fn robot_model(&self) -> RobotModel {
        RobotModel::for_profile(self.run.robot)
    }

    pub fn encoder_kind(&self) -> EncoderKind {
        EncoderKind::parse(&self.run.encoder).expect("validated")
    }

    pub fn encoder_config(&self) -> EncoderConfig {
        EncoderConfig {
            length: self.encoder.length,
            width: self.encoder.width,
            dim: self.encoder.dim,
            heads: self.encoder.heads,
            query_len: self.encoder.query_len,
            proprio_dim: self.robot_model().proprio_dim(),
            scan_resolution: self.encoder.scan_resolution,
        }
    }

    pub fn policy_config(&self) -> PolicyConfig {
        PolicyConfig {
            action_dim: self.robot_model().joint_count,
            hidden: self.policy.hidden,
            head_input: self.policy.head_input,
            init_log_std: self.policy.init_log_std,
            per_joint_log_std: self.policy.per_joint_log_std,
        }
    }

    pub fn reward_weights(&self) -> Result<RewardWeights> {
        let mut w = RewardWeights::defaults(self.run.robot);
        for (name, weight) in &self.reward {
            w.set(name, *weight)?;
        }
        Ok(w)
    }

    pub fn stage_plan(&self, stage: u8) -> Result<StagePlan> {
        let section = match stage {
            1 => &self.stage1,
            2 => &self.stage2,
            other => {
                return Err(Error::config("stage", format!("stage must be 1 or 2, got {other}")))
            }
        };
        let mut plan = match stage {
            1 => StagePlan::stage1(self.run.robot, section.epochs),
            _ => StagePlan::stage2(self.run.robot, section.epochs),
        };
        plan.checkpoint_every = section.checkpoint_every;
        plan.fixed_level = section.fixed_level;
        if let Some(names) = &section.families {
            let mut families = Vec::with_capacity(names.len());
            for n in names {
                families.push(TerrainFamily::parse(n)?);
            }
            if families.is_empty() {
                return Err(Error::config(
                    format!("stage{stage}.families"),
                    "family override must not be empty",
                ));
            }
            plan.families = families;
        }
        Ok(plan)
    }

    /// Initialize actor-critic weights from the master seed.
    pub fn init_weights<T: Scalar>(&self) -> Result<ActorCriticWeights<T>> {
        use rand::SeedableRng;
        let mut rng = ChaCha8Rng::seed_from_u64(self.run.master_seed);
        let encoder = Encoder::init(&mut rng, self.encoder_kind(), &self.encoder_config())?;
        ActorCriticWeights::init(&mut rng, encoder, self.policy_config())
    }
}
