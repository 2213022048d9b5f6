//! Generalized advantage estimation.

use crate::error::{Error, Result};
use crate::tensor::Scalar;

/// Backward-recursive GAE over a time-major rollout.
///
/// Arrays are indexed `t * env_count + e`. `bootstrap` holds the value of the
/// state after the last step, one entry per environment. A done flag cuts
/// both the bootstrap and the advantage recursion:
/// delta_t = r_t + gamma * v_{t+1} * (1 - done_t) - v_t and
/// A_t = delta_t + gamma * lambda * (1 - done_t) * A_{t+1}.
/// Returns (advantages, returns) with returns = advantages + values.
#[allow(clippy::too_many_arguments)]
pub fn compute_gae<T: Scalar>(
    rewards: &[T],
    values: &[T],
    dones: &[bool],
    bootstrap: &[T],
    env_count: usize,
    steps: usize,
    gamma: f64,
    lam: f64,
) -> Result<(Vec<T>, Vec<T>)> {
    let n = steps * env_count;
    if rewards.len() != n || values.len() != n || dones.len() != n || bootstrap.len() != env_count {
        return Err(Error::shape(
            "compute_gae",
            format!(
                "rewards {} values {} dones {} bootstrap {} vs steps {steps} x envs {env_count}",
                rewards.len(),
                values.len(),
                dones.len(),
                bootstrap.len()
            ),
        ));
    }
    let g = T::from_f64(gamma);
    let gl = T::from_f64(gamma * lam);
    let mut advantages = vec![T::zero(); n];
    let mut returns = vec![T::zero(); n];
    for e in 0..env_count {
        let mut next_value = bootstrap[e];
        let mut acc = T::zero();
        for t in (0..steps).rev() {
            let i = t * env_count + e;
            let not_done = if dones[i] { T::zero() } else { T::one() };
            let delta = rewards[i] + g * next_value * not_done - values[i];
            acc = delta + gl * not_done * acc;
            advantages[i] = acc;
            returns[i] = acc + values[i];
            next_value = values[i];
        }
    }
    Ok((advantages, returns))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Independent oracle: direct double-loop evaluation of
    /// A_t = sum_k (gamma*lambda)^(k-t) * delta_k * prod_{j in [t, k)} (1 - done_j).
    fn gae_oracle(
        rewards: &[f64],
        values: &[f64],
        dones: &[bool],
        bootstrap: &[f64],
        env_count: usize,
        steps: usize,
        gamma: f64,
        lam: f64,
    ) -> Vec<f64> {
        let mut adv = vec![0.0; steps * env_count];
        for e in 0..env_count {
            for t in 0..steps {
                let mut acc = 0.0;
                let mut weight = 1.0;
                for k in t..steps {
                    let i = k * env_count + e;
                    let next_v = if k + 1 < steps {
                        values[(k + 1) * env_count + e]
                    } else {
                        bootstrap[e]
                    };
                    let not_done = if dones[i] { 0.0 } else { 1.0 };
                    let delta = rewards[i] + gamma * next_v * not_done - values[i];
                    acc += weight * delta;
                    if dones[i] {
                        break;
                    }
                    weight *= gamma * lam;
                }
                adv[t * env_count + e] = acc;
            }
        }
        adv
    }

    fn random_case(seed: u64, envs: usize, steps: usize, done_prob: f64) -> (Vec<f64>, Vec<f64>, Vec<bool>, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = envs * steps;
        let rewards: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let values: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let dones: Vec<bool> = (0..n).map(|_| rng.gen_bool(done_prob)).collect();
        let bootstrap: Vec<f64> = (0..envs).map(|_| rng.gen_range(-1.0..1.0)).collect();
        (rewards, values, dones, bootstrap)
    }

    #[test]
    fn lambda_zero_collapses_to_one_step_deltas() {
        let (rewards, values, dones, bootstrap) = random_case(0, 3, 8, 0.2);
        let (adv, ret) = compute_gae(&rewards, &values, &dones, &bootstrap, 3, 8, 0.99, 0.0).unwrap();
        for e in 0..3 {
            for t in 0..8 {
                let i = t * 3 + e;
                let next_v = if t + 1 < 8 { values[(t + 1) * 3 + e] } else { bootstrap[e] };
                let not_done = if dones[i] { 0.0 } else { 1.0 };
                let delta = rewards[i] + 0.99 * next_v * not_done - values[i];
                assert!((adv[i] - delta).abs() < 1e-15);
                assert!((ret[i] - (delta + values[i])).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn lambda_one_without_dones_is_the_monte_carlo_return() {
        let (rewards, values, _, bootstrap) = random_case(1, 2, 6, 0.0);
        let dones = vec![false; 12];
        let gamma = 0.97;
        let (adv, _) = compute_gae(&rewards, &values, &dones, &bootstrap, 2, 6, gamma, 1.0).unwrap();
        for e in 0..2 {
            for t in 0..6 {
                let mut expect = -values[t * 2 + e];
                for k in t..6 {
                    expect += gamma.powi((k - t) as i32) * rewards[k * 2 + e];
                }
                expect += gamma.powi((6 - t) as i32) * bootstrap[e];
                assert!((adv[t * 2 + e] - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn matches_double_loop_oracle_on_random_rollouts() {
        // 100 random rollouts including mid-rollout dones
        for seed in 0..100u64 {
            let (rewards, values, dones, bootstrap) = random_case(seed, 3, 8, 0.25);
            let (adv, ret) =
                compute_gae(&rewards, &values, &dones, &bootstrap, 3, 8, 0.99, 0.95).unwrap();
            let oracle = gae_oracle(&rewards, &values, &dones, &bootstrap, 3, 8, 0.99, 0.95);
            for i in 0..adv.len() {
                assert!(
                    (adv[i] - oracle[i]).abs() < 1e-10,
                    "seed {seed} idx {i}: {} vs {}",
                    adv[i],
                    oracle[i]
                );
                assert!((ret[i] - (oracle[i] + values[i])).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn length_mismatch_is_an_error() {
        let r = vec![0.0f64; 5];
        let v = vec![0.0f64; 6];
        let d = vec![false; 6];
        let b = vec![0.0f64; 2];
        assert!(compute_gae(&r, &v, &d, &b, 2, 3, 0.99, 0.95).is_err());
    }
}
