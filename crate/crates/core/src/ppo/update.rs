//! Clipped-surrogate PPO update with adaptive-KL learning rate.

use super::{Adam, PPOConfig, RolloutBuffer};
use crate::error::Result;
use crate::heads::{batch_from_bundles, ActorCriticWeights};
use crate::ppo::compute_gae;
use crate::tensor::{Graph, Scalar, Tensor, Var};
use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;

/// Aggregated statistics of one `ppo_update`.
#[derive(Clone, Debug, Default)]
pub struct UpdateStats {
    pub mean_kl: f64,
    pub clip_fraction: f64,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub lr: f64,
    /// True when a non-finite loss aborted the update.
    pub aborted: bool,
}

/// Adaptive learning-rate rule around a dead zone of the desired KL.
pub fn adapt_lr(lr: f64, measured_kl: f64, desired_kl: f64, lr_min: f64, lr_max: f64) -> f64 {
    let mut lr = lr;
    if measured_kl > 2.0 * desired_kl {
        lr /= 1.5;
    } else if measured_kl < desired_kl / 2.0 {
        lr *= 1.5;
    }
    lr.clamp(lr_min, lr_max)
}

/// In-place normalization to zero mean and unit standard deviation,
/// accumulated in f64.
pub fn normalize_advantages(adv: &mut [f64]) {
    if adv.is_empty() {
        return;
    }
    let n = adv.len() as f64;
    let mean: f64 = adv.iter().sum::<f64>() / n;
    let var: f64 = adv.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / n;
    let std = var.sqrt().max(1.0e-8);
    for a in adv.iter_mut() {
        *a = (*a - mean) / std;
    }
}

/// min(ratio * adv, clip(ratio, 1-eps, 1+eps) * adv), per sample.
pub fn clipped_surrogate<T: Scalar>(g: &Graph<T>, ratio: Var, adv: Var, clip: f64) -> Result<Var> {
    let unclipped = g.mul(ratio, adv)?;
    let clipped = g.mul(g.clip(ratio, 1.0 - clip, 1.0 + clip), adv)?;
    g.min_bin(unclipped, clipped)
}

/// Analytic KL between diagonal Gaussians, mean over the batch.
fn mean_gaussian_kl(
    old_means: &[f64],
    new_means: &[f64],
    old_std: &[f64],
    new_log_std: &[f64],
    action_dim: usize,
) -> f64 {
    let batch = old_means.len() / action_dim;
    let mut total = 0.0;
    for b in 0..batch {
        for j in 0..action_dim {
            let mu_o = old_means[b * action_dim + j];
            let mu_n = new_means[b * action_dim + j];
            let so = old_std[j];
            let ln_sn = new_log_std[j.min(new_log_std.len() - 1)];
            let sn2 = (2.0 * ln_sn).exp();
            total += ln_sn - so.ln() + (so * so + (mu_o - mu_n) * (mu_o - mu_n)) / (2.0 * sn2) - 0.5;
        }
    }
    total / batch as f64
}

/// One full PPO update over a filled buffer: `epochs` passes over
/// `num_minibatches` shuffled minibatches, adapting the learning rate from
/// the measured KL before every optimizer step.
#[allow(clippy::too_many_arguments)]
pub fn ppo_update<T: Scalar>(
    buffer: &RolloutBuffer,
    weights: &mut ActorCriticWeights<T>,
    adam: &mut Adam<T>,
    cfg: &PPOConfig,
    stage: u8,
    lr: &mut f64,
    rng: &mut ChaCha8Rng,
) -> Result<UpdateStats> {
    assert!(buffer.is_full(), "ppo_update requires a full buffer");
    let action_dim = buffer.action_dim;
    let enc_cfg = weights.encoder.config().clone();
    let per_joint = weights.policy_cfg.per_joint_log_std;

    // advantages and returns
    let (mut advantages, returns) = {
        let (a, r) = compute_gae(
            &buffer.rewards,
            &buffer.values,
            &buffer.dones,
            &buffer.bootstrap,
            buffer.env_count,
            buffer.steps,
            cfg.gamma,
            cfg.lam,
        )?;
        (a, r)
    };
    normalize_advantages(&mut advantages);

    let mut stats = UpdateStats {
        lr: *lr,
        ..Default::default()
    };
    if advantages.iter().any(|a| !a.is_finite()) || returns.iter().any(|r| !r.is_finite()) {
        stats.aborted = true;
        return Ok(stats);
    }

    let batch = buffer.capacity();
    let mb_size = cfg.minibatch_size();
    let mut indices: Vec<usize> = (0..batch).collect();
    let mut minibatches = 0usize;

    for _epoch in 0..cfg.epochs {
        indices.shuffle(rng);
        for mb in 0..cfg.num_minibatches {
            let idx = &indices[mb * mb_size..(mb + 1) * mb_size];

            let actor_refs: Vec<&crate::env::ObservationBundle> =
                idx.iter().map(|&i| &buffer.actor_obs[i]).collect();
            let critic_refs: Vec<&crate::env::ObservationBundle> =
                idx.iter().map(|&i| &buffer.critic_obs[i]).collect();
            let (actor_scans, actor_proprio) = batch_from_bundles::<T>(&actor_refs, &enc_cfg)?;
            let (critic_scans, critic_proprio) = batch_from_bundles::<T>(&critic_refs, &enc_cfg)?;

            let mut action_data = Vec::with_capacity(mb_size * action_dim);
            let mut old_logp = Vec::with_capacity(mb_size);
            let mut adv_data = Vec::with_capacity(mb_size);
            let mut ret_data = Vec::with_capacity(mb_size);
            let mut old_means = Vec::with_capacity(mb_size * action_dim);
            for &i in idx {
                action_data.extend(buffer.action(i).iter().map(|&v| T::from_f64(v)));
                old_means.extend_from_slice(buffer.mean(i));
                old_logp.push(T::from_f64(buffer.log_probs[i]));
                adv_data.push(T::from_f64(advantages[i]));
                ret_data.push(T::from_f64(returns[i]));
            }

            let g = Graph::new();
            let vars = weights.bind(&g, true);
            let ordered = vars.ordered_vars();

            let scans_v = g.constant(actor_scans);
            let proprio_v = g.constant(actor_proprio);
            let (mean, _) = vars.actor_mean(&g, scans_v, proprio_v)?;

            // log probability of the stored actions under the new policy
            let actions_v = g.constant(Tensor::new(&[mb_size, action_dim], action_data)?);
            let diff = g.sub(actions_v, mean)?;
            let sq = g.mul(diff, diff)?;
            let (weighted, sum_log_std) = if per_joint {
                let inv_var = g.exp(g.mul_const(vars.log_std_var(), -2.0));
                let inv_var_row = g.reshape(inv_var, &[action_dim])?;
                (g.mul_row(sq, inv_var_row)?, g.sum_all(vars.log_std_var()))
            } else {
                let inv_var = g.exp(g.mul_const(vars.log_std_var(), -2.0));
                (
                    g.mul_scalar_var(sq, inv_var)?,
                    g.mul_const(g.sum_all(vars.log_std_var()), action_dim as f64),
                )
            };
            let half_maha = g.mul_const(g.sum_axis(weighted, 1)?, -0.5);
            let log_two_pi = (2.0 * std::f64::consts::PI).ln();
            let logp_new = g.add_const(
                g.add_scalar_var(half_maha, g.neg(sum_log_std))?,
                -(action_dim as f64) / 2.0 * log_two_pi,
            );

            let old_logp_v = g.constant(Tensor::new(&[mb_size], old_logp)?);
            let ratio = g.exp(g.sub(logp_new, old_logp_v)?);
            let adv_v = g.constant(Tensor::new(&[mb_size], adv_data)?);
            let surrogate = clipped_surrogate(&g, ratio, adv_v, cfg.clip)?;
            let policy_loss = g.neg(g.mean_all(surrogate));

            let cs = g.constant(critic_scans);
            let cp = g.constant(critic_proprio);
            let value = g.reshape(vars.critic_value(&g, cs, cp)?, &[mb_size])?;
            let ret_v = g.constant(Tensor::new(&[mb_size], ret_data.clone())?);
            let vdiff = g.sub(value, ret_v)?;
            let value_loss = g.mean_all(g.mul(vdiff, vdiff)?);
            // returns are unnormalized discounted sums and can dwarf the
            // surrogate; scale the value loss by the batch return variance so
            // the shared encoder sees comparable gradient magnitudes
            let ret_mean: f64 = ret_data.iter().map(|v| v.as_f64()).sum::<f64>() / mb_size as f64;
            let ret_var: f64 = ret_data
                .iter()
                .map(|v| {
                    let d = v.as_f64() - ret_mean;
                    d * d
                })
                .sum::<f64>()
                / mb_size as f64;
            let value_scale = 1.0 / ret_var.max(1.0);
            let value_loss_scaled = g.mul_const(value_loss, value_scale);

            let entropy_core = if per_joint {
                g.sum_all(vars.log_std_var())
            } else {
                g.mul_const(g.sum_all(vars.log_std_var()), action_dim as f64)
            };
            let entropy = g.add_const(
                entropy_core,
                action_dim as f64 / 2.0 * (1.0 + log_two_pi),
            );

            let loss = g.sub(
                g.add(policy_loss, g.mul_const(value_loss_scaled, cfg.value_loss_coef))?,
                g.mul_const(entropy, cfg.entropy_coef(stage)),
            )?;

            let loss_value = g.item(loss).as_f64();
            if !loss_value.is_finite() {
                stats.aborted = true;
                stats.lr = *lr;
                return Ok(stats);
            }

            // measured KL against the collection-time distribution
            let new_means: Vec<f64> = g.value(mean).data().iter().map(|v| v.as_f64()).collect();
            let new_log_std: Vec<f64> = g
                .value(vars.log_std_var())
                .data()
                .iter()
                .map(|v| v.as_f64())
                .collect();
            let kl = mean_gaussian_kl(&old_means, &new_means, &buffer.old_std, &new_log_std, action_dim);

            let ratio_vals = g.value(ratio);
            let clipped_count = ratio_vals
                .data()
                .iter()
                .filter(|r| (r.as_f64() - 1.0).abs() > cfg.clip)
                .count();

            // frozen learning rate (exactly zero) skips adaptation
            if *lr > 0.0 {
                *lr = adapt_lr(*lr, kl, cfg.desired_kl, cfg.lr_min, cfg.lr_max);
            }

            g.backward(loss)?;
            let grads: Vec<Option<Tensor<T>>> = ordered.iter().map(|&v| g.grad(v)).collect();
            let mut params = weights.named_tensors_mut();
            debug_assert_eq!(params.len(), grads.len());
            adam.step(&mut params, &grads, *lr, cfg.grad_clip);

            stats.mean_kl += kl;
            stats.clip_fraction += clipped_count as f64 / mb_size as f64;
            stats.policy_loss += g.item(policy_loss).as_f64();
            stats.value_loss += g.item(value_loss).as_f64();
            stats.entropy += g.item(entropy).as_f64();
            minibatches += 1;
        }
    }

    let denom = minibatches.max(1) as f64;
    stats.mean_kl /= denom;
    stats.clip_fraction /= denom;
    stats.policy_loss /= denom;
    stats.value_loss /= denom;
    stats.entropy /= denom;
    stats.lr = *lr;
    Ok(stats)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn adapt_lr_rule_arithmetic() {
        // measured above the dead zone: divide by 1.5
        let lr = adapt_lr(1.0e-3, 0.03, 0.01, 1.0e-6, 1.0e-2);
        assert!((lr - 1.0e-3 / 1.5).abs() < 1e-12, "{lr}");
        // below the dead zone: multiply by 1.5
        let lr = adapt_lr(1.0e-3, 0.004, 0.01, 1.0e-6, 1.0e-2);
        assert!((lr - 1.5e-3).abs() < 1e-12);
        // inside the dead zone: unchanged
        let lr = adapt_lr(1.0e-3, 0.01, 0.01, 1.0e-6, 1.0e-2);
        assert_eq!(lr, 1.0e-3);
        // clamping
        assert_eq!(adapt_lr(1.0e-2, 0.001, 0.01, 1.0e-6, 1.0e-2), 1.0e-2);
        assert_eq!(adapt_lr(1.2e-6, 0.05, 0.01, 1.0e-6, 1.0e-2), 1.0e-6);
    }

    #[test]
    fn advantage_normalization_statistics() {
        use rand::{Rng, SeedableRng};
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut adv: Vec<f64> = (0..1536).map(|_| rng.gen_range(-3.0..5.0)).collect();
        normalize_advantages(&mut adv);
        let n = adv.len() as f64;
        let mean: f64 = adv.iter().sum::<f64>() / n;
        let std: f64 = (adv.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / n).sqrt();
        assert!(mean.abs() < 1e-8, "mean {mean}");
        assert!((std - 1.0).abs() < 1e-6, "std {std}");
    }

    #[test]
    fn surrogate_clips_positive_advantage_at_ratio_bound() {
        // ratio 1.5 with positive advantage and eps 0.2 contributes 1.2 * adv
        let g = Graph::<f64>::new();
        let ratio = g.constant(Tensor::from_f64_slice(&[1], &[1.5]).unwrap());
        let adv = g.constant(Tensor::from_f64_slice(&[1], &[2.0]).unwrap());
        let surr = clipped_surrogate(&g, ratio, adv, 0.2).unwrap();
        assert_eq!(g.value(surr).data(), &[1.2 * 2.0]);
        // ratio below the band with negative advantage clips at 0.8
        let ratio = g.constant(Tensor::from_f64_slice(&[1], &[0.5]).unwrap());
        let adv = g.constant(Tensor::from_f64_slice(&[1], &[-1.0]).unwrap());
        let surr = clipped_surrogate(&g, ratio, adv, 0.2).unwrap();
        assert_eq!(g.value(surr).data(), &[-0.8]);
    }

    #[test]
    fn gaussian_kl_is_zero_for_identical_distributions() {
        let means = vec![0.3, -0.2, 0.5];
        let kl = mean_gaussian_kl(&means, &means, &[1.0, 0.5, 2.0], &[0.0, -0.693147, 0.693147], 3);
        assert!(kl.abs() < 1e-5, "{kl}");
        // shifted means give strictly positive KL
        let shifted = vec![0.4, -0.2, 0.5];
        let kl = mean_gaussian_kl(&means, &shifted, &[1.0, 0.5, 2.0], &[0.0, -0.693147, 0.693147], 3);
        assert!(kl > 0.0);
    }
}
