//! Actor and critic heads over the shared map encoder.
//!
//! Both heads consume the encoder output; by default the map encoding is
//! concatenated with the proprioception embedding before the MLPs (the
//! alternative wiring that feeds the encoding alone sits behind
//! [`HeadInput`]). The action distribution is a diagonal Gaussian with a
//! state-independent learned log standard deviation, per joint by default.

use crate::encoder::{BatchEncoding, Encoder, EncoderConfig, EncoderForward, EncoderVars, MapScan};
use crate::env::ObservationBundle;
use crate::error::{Error, Result};
use crate::nn::{Mlp, MlpVars};
use crate::tensor::{Graph, Scalar, Tensor, Var};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

/// What feeds the actor/critic MLPs.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HeadInput {
    /// Map encoding only.
    Encoding,
    /// Map encoding concatenated with the proprioception embedding.
    Concat,
}

/// Head dimensions and distribution settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PolicyConfig {
    pub action_dim: usize,
    pub hidden: usize,
    pub head_input: HeadInput,
    pub init_log_std: f64,
    /// Per-joint log-std when true, a single shared scalar otherwise.
    pub per_joint_log_std: bool,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        PolicyConfig {
            action_dim: 12,
            hidden: 256,
            head_input: HeadInput::Concat,
            init_log_std: 0.0,
            per_joint_log_std: true,
        }
    }
}

impl PolicyConfig {
    pub fn validate(&self) -> Result<()> {
        if self.action_dim == 0 {
            return Err(Error::config("policy.action_dim", "must be positive"));
        }
        if self.hidden == 0 {
            return Err(Error::config("policy.hidden", "must be positive"));
        }
        Ok(())
    }

    fn input_dim(&self, d: usize) -> usize {
        match self.head_input {
            HeadInput::Encoding => d,
            HeadInput::Concat => 2 * d,
        }
    }

    fn log_std_len(&self) -> usize {
        if self.per_joint_log_std {
            self.action_dim
        } else {
            1
        }
    }
}

/// Mean action, per-dimension standard deviation and optional value.
#[derive(Clone, Debug)]
pub struct PolicyOutput<T> {
    pub action_mean: Tensor<T>,
    pub action_std: Vec<f64>,
    pub value: Option<f64>,
}

/// Shared encoder plus actor/critic MLPs and the log-std vector.
#[derive(Clone, Debug)]
pub struct ActorCriticWeights<T> {
    pub encoder: Encoder<T>,
    pub policy_cfg: PolicyConfig,
    pub actor: Mlp<T>,
    pub critic: Mlp<T>,
    pub log_std: Tensor<T>,
}

pub struct ActorCriticVars {
    pub encoder: EncoderVars,
    pub actor: MlpVars,
    pub critic: MlpVars,
    pub log_std: Var,
    head_input: HeadInput,
}

impl<T: Scalar> ActorCriticWeights<T> {
    pub fn init(rng: &mut ChaCha8Rng, encoder: Encoder<T>, policy_cfg: PolicyConfig) -> Result<Self> {
        policy_cfg.validate()?;
        let d = encoder.config().dim;
        let input = policy_cfg.input_dim(d);
        let actor = Mlp::orthogonal(
            rng,
            &[input, policy_cfg.hidden, policy_cfg.hidden, policy_cfg.action_dim],
            0.01,
        );
        let critic = Mlp::orthogonal(rng, &[input, policy_cfg.hidden, policy_cfg.hidden, 1], 1.0);
        let log_std = Tensor::full(
            &[1, policy_cfg.log_std_len()],
            T::from_f64(policy_cfg.init_log_std),
        );
        Ok(ActorCriticWeights {
            encoder,
            policy_cfg,
            actor,
            critic,
            log_std,
        })
    }

    pub fn config(&self) -> &EncoderConfig {
        self.encoder.config()
    }

    pub fn bind(&self, g: &Graph<T>, trainable: bool) -> ActorCriticVars {
        ActorCriticVars {
            encoder: self.encoder.bind(g, trainable),
            actor: self.actor.bind(g, trainable),
            critic: self.critic.bind(g, trainable),
            log_std: g.leaf(self.log_std.clone(), trainable),
            head_input: self.policy_cfg.head_input,
        }
    }

    /// Bind against externally supplied parameter vars, aligned with
    /// `named_tensors` order. Used by gradient checks that own the leaves.
    pub fn bind_with_vars(&self, g: &Graph<T>, vars: &[Var]) -> Result<ActorCriticVars> {
        let expected = self.named_tensors().len();
        if vars.len() != expected {
            return Err(Error::shape(
                "bind_with_vars",
                format!("{} vars supplied, weights have {expected} tensors", vars.len()),
            ));
        }
        let (encoder, mut at) = self.encoder.vars_from_slice(g, vars);
        let take_linear = |at: &mut usize| {
            let lv = crate::nn::LinearVars {
                weight: vars[*at],
                bias: vars[*at + 1],
            };
            *at += 2;
            lv
        };
        let actor = MlpVars {
            layers: (0..self.actor.layers.len())
                .map(|_| take_linear(&mut at))
                .collect(),
        };
        let critic = MlpVars {
            layers: (0..self.critic.layers.len())
                .map(|_| take_linear(&mut at))
                .collect(),
        };
        let log_std = vars[at];
        Ok(ActorCriticVars {
            encoder,
            actor,
            critic,
            log_std,
            head_input: self.policy_cfg.head_input,
        })
    }

    /// Standard deviations as plain values.
    pub fn action_std(&self) -> Vec<f64> {
        let stds: Vec<f64> = self.log_std.data().iter().map(|v| v.as_f64().exp()).collect();
        if self.policy_cfg.per_joint_log_std {
            stds
        } else {
            vec![stds[0]; self.policy_cfg.action_dim]
        }
    }

    /// Closed-form entropy of the diagonal Gaussian; a function of the
    /// log-std alone.
    pub fn entropy(&self) -> f64 {
        let a = self.policy_cfg.action_dim as f64;
        let sum_log_std: f64 = if self.policy_cfg.per_joint_log_std {
            self.log_std.data().iter().map(|v| v.as_f64()).sum()
        } else {
            self.log_std.data()[0].as_f64() * a
        };
        sum_log_std + a / 2.0 * (1.0 + (2.0 * std::f64::consts::PI).ln())
    }

    pub fn named_tensors(&self) -> Vec<(String, &Tensor<T>)> {
        let mut out: Vec<(String, &Tensor<T>)> = self
            .encoder
            .named_tensors()
            .into_iter()
            .map(|(n, t)| (format!("encoder.{n}"), t))
            .collect();
        for (i, l) in self.actor.layers.iter().enumerate() {
            out.push((format!("actor.l{i}.weight"), &l.weight));
            out.push((format!("actor.l{i}.bias"), &l.bias));
        }
        for (i, l) in self.critic.layers.iter().enumerate() {
            out.push((format!("critic.l{i}.weight"), &l.weight));
            out.push((format!("critic.l{i}.bias"), &l.bias));
        }
        out.push(("log_std".into(), &self.log_std));
        out
    }

    pub fn named_tensors_mut(&mut self) -> Vec<(String, &mut Tensor<T>)> {
        let mut out: Vec<(String, &mut Tensor<T>)> = self
            .encoder
            .named_tensors_mut()
            .into_iter()
            .map(|(n, t)| (format!("encoder.{n}"), t))
            .collect();
        for (i, l) in self.actor.layers.iter_mut().enumerate() {
            out.push((format!("actor.l{i}.weight"), &mut l.weight));
            out.push((format!("actor.l{i}.bias"), &mut l.bias));
        }
        for (i, l) in self.critic.layers.iter_mut().enumerate() {
            out.push((format!("critic.l{i}.weight"), &mut l.weight));
            out.push((format!("critic.l{i}.bias"), &mut l.bias));
        }
        out.push(("log_std".into(), &mut self.log_std));
        out
    }

    pub fn cast<U: Scalar>(&self) -> ActorCriticWeights<U> {
        ActorCriticWeights {
            encoder: self.encoder.cast(),
            policy_cfg: self.policy_cfg.clone(),
            actor: self.actor.cast(),
            critic: self.critic.cast(),
            log_std: self.log_std.cast(),
        }
    }
}

impl ActorCriticVars {
    /// Trainable leaves, aligned with `ActorCriticWeights::named_tensors`.
    pub fn ordered_vars(&self) -> Vec<Var> {
        let mut out = self.encoder.ordered_vars();
        for l in &self.actor.layers {
            out.push(l.weight);
            out.push(l.bias);
        }
        for l in &self.critic.layers {
            out.push(l.weight);
            out.push(l.bias);
        }
        out.push(self.log_std);
        out
    }

    fn head_input<T: Scalar>(&self, g: &Graph<T>, enc: &BatchEncoding) -> Result<Var> {
        match self.head_input {
            HeadInput::Encoding => Ok(enc.encoding),
            HeadInput::Concat => g.concat(&[enc.encoding, enc.proprio_embedding], 1),
        }
    }

    /// Actor mean over a batch: scans [B, L, W, 3], proprio [B, d_obs].
    /// Returns ([B, A] means, attention when the encoder exposes it).
    pub fn actor_mean<T: Scalar>(
        &self,
        g: &Graph<T>,
        scans: Var,
        proprio: Var,
    ) -> Result<(Var, Option<Var>)> {
        let enc = self.encoder.forward_batch(g, scans, proprio)?;
        let input = self.head_input(g, &enc)?;
        let mean = self.actor.forward(g, input)?;
        Ok((mean, enc.attention))
    }

    /// Critic value over a batch: [B, 1].
    pub fn critic_value<T: Scalar>(&self, g: &Graph<T>, scans: Var, proprio: Var) -> Result<Var> {
        let enc = self.encoder.forward_batch(g, scans, proprio)?;
        let input = self.head_input(g, &enc)?;
        self.critic.forward(g, input)
    }

    pub fn log_std_var(&self) -> Var {
        self.log_std
    }
}

/// Stack observation bundles into batch tensors (scans [B, L, W, 3],
/// proprioception [B, d_obs]).
pub fn batch_from_bundles<T: Scalar>(
    bundles: &[&ObservationBundle],
    cfg: &EncoderConfig,
) -> Result<(Tensor<T>, Tensor<T>)> {
    let b = bundles.len();
    let mut scan_data = Vec::with_capacity(b * cfg.tokens() * 3);
    let mut proprio_data = Vec::with_capacity(b * cfg.proprio_dim);
    for bundle in bundles {
        if bundle.proprio.len() != cfg.proprio_dim {
            return Err(Error::shape(
                "batch_from_bundles",
                format!(
                    "proprioception has {} entries, encoder expects {}",
                    bundle.proprio.len(),
                    cfg.proprio_dim
                ),
            ));
        }
        for v in bundle.scan.points().data() {
            scan_data.push(T::from_f64(*v));
        }
        for v in &bundle.proprio {
            proprio_data.push(T::from_f64(*v));
        }
    }
    Ok((
        Tensor::new(&[b, cfg.length, cfg.width, 3], scan_data)?,
        Tensor::new(&[b, cfg.proprio_dim], proprio_data)?,
    ))
}

/// Log density of a diagonal Gaussian.
pub fn gaussian_log_prob(action: &[f64], mean: &[f64], std: &[f64]) -> f64 {
    let a = action.len() as f64;
    let mut lp = -a / 2.0 * (2.0 * std::f64::consts::PI).ln();
    for i in 0..action.len() {
        let z = (action[i] - mean[i]) / std[i];
        lp -= 0.5 * z * z + std[i].ln();
    }
    lp
}

/// Policy action for one observation.
///
/// `stochastic = false` returns the distribution mean and is a pure function
/// of the observation and weights.
pub fn act<T: Scalar>(
    obs: &ObservationBundle,
    weights: &ActorCriticWeights<T>,
    stochastic: bool,
    rng: &mut ChaCha8Rng,
) -> Result<(Tensor<T>, f64, Option<Tensor<T>>)> {
    let cfg = weights.encoder.config();
    let g = Graph::new();
    let vars = weights.bind(&g, false);
    let (scans, proprio) = batch_from_bundles::<T>(&[obs], cfg)?;
    let (mean_var, attn_var) = vars.actor_mean(&g, g.constant(scans), g.constant(proprio))?;
    let mean_t = g.value(mean_var);
    let mean: Vec<f64> = mean_t.data().iter().map(|v| v.as_f64()).collect();
    let std = weights.action_std();

    let action: Vec<f64> = if stochastic {
        mean.iter()
            .zip(std.iter())
            .map(|(m, s)| {
                let eps: f64 = StandardNormal.sample(rng);
                m + s * eps
            })
            .collect()
    } else {
        mean.clone()
    };
    let log_prob = gaussian_log_prob(&action, &mean, &std);
    let action_t = Tensor::from_f64_slice(&[1, weights.policy_cfg.action_dim], &action)?;
    let attention = attn_var.map(|v| g.value(v));
    Ok((action_t, log_prob, attention))
}

/// Critic value for one (privileged) observation.
pub fn evaluate<T: Scalar>(obs: &ObservationBundle, weights: &ActorCriticWeights<T>) -> Result<f64> {
    let cfg = weights.encoder.config();
    let g = Graph::new();
    let vars = weights.bind(&g, false);
    let (scans, proprio) = batch_from_bundles::<T>(&[obs], cfg)?;
    let value = vars.critic_value(&g, g.constant(scans), g.constant(proprio))?;
    Ok(g.value(value).data()[0].as_f64())
}

/// Scan + proprioception convenience constructor for tests and tools.
pub fn bundle_from_parts(scan: MapScan<f64>, proprio: Vec<f64>, privileged: bool) -> ObservationBundle {
    ObservationBundle {
        proprio,
        scan,
        privileged,
    }
}
