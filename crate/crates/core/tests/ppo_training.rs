//! Integration tests for the PPO trainer on tiny configurations.

use attnloco_core::encoder::{Encoder, EncoderConfig, EncoderKind};
use attnloco_core::env::{EnvConfig, RandomizationConfig, RewardWeights, RobotModel};
use attnloco_core::heads::{ActorCriticWeights, HeadInput, PolicyConfig};
use attnloco_core::ppo::{ppo_update, Adam, PPOConfig, RolloutBuffer, StagePlan, Trainer};
use attnloco_core::terrain::{RobotProfile, TerrainGenConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn tiny_weights(seed: u64) -> (ActorCriticWeights<f64>, RobotModel) {
    let model = RobotModel::quadruped();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cfg = EncoderConfig {
        length: 5,
        width: 4,
        dim: 8,
        heads: 2,
        query_len: 1,
        proprio_dim: model.proprio_dim(),
        scan_resolution: 0.1,
    };
    let encoder = Encoder::init(&mut rng, EncoderKind::Primary, &cfg).unwrap();
    let policy_cfg = PolicyConfig {
        action_dim: model.joint_count,
        hidden: 16,
        head_input: HeadInput::Concat,
        init_log_std: 0.0,
        per_joint_log_std: true,
    };
    (
        ActorCriticWeights::init(&mut rng, encoder, policy_cfg).unwrap(),
        model,
    )
}

fn tiny_trainer(seed: u64, epochs: usize) -> Trainer<f64> {
    let (weights, model) = tiny_weights(seed);
    let mut ppo = PPOConfig::default();
    ppo.env_count = 6;
    ppo.steps_per_env = 12;
    ppo.num_minibatches = 3;
    ppo.epochs = 2;
    let mut env_cfg = EnvConfig::default();
    env_cfg.episode_seconds = 4.0;
    let mut plan = StagePlan::stage1(RobotProfile::Quadruped, epochs);
    plan.fixed_level = Some(0);
    Trainer::new(
        weights,
        model,
        ppo,
        env_cfg,
        TerrainGenConfig::default(),
        RandomizationConfig::none(),
        RewardWeights::defaults(RobotProfile::Quadruped),
        plan,
        seed,
    )
    .unwrap()
}

/// Fill a buffer by running the trainer's own rollout path once.
fn rollout_once(trainer: &mut Trainer<f64>) -> attnloco_core::ppo::EpochRecord {
    trainer.run_epoch().unwrap()
}

#[test]
fn epoch_runs_and_reports_sane_statistics() {
    let mut trainer = tiny_trainer(0, 1);
    let record = rollout_once(&mut trainer);
    assert!(record.kl >= -1.0e-8, "kl {}", record.kl);
    assert!((0.0..=1.0).contains(&record.clip_fraction));
    assert!(record.lr > 0.0);
    assert!(record.mean_total.is_finite());
    assert!(record.term("lin_vel_tracking").is_some());
    // stage-1 logs omit the stage-2 standing rows
    assert!(record.term("standing_joint_velocity").is_none());
}

#[test]
fn zero_learning_rate_keeps_weights_bitwise_identical() {
    let mut trainer = tiny_trainer(1, 1);
    trainer.lr = 0.0;
    let before: Vec<(String, Vec<f64>)> = trainer
        .weights
        .named_tensors()
        .into_iter()
        .map(|(n, t)| (n, t.data().to_vec()))
        .collect();
    rollout_once(&mut trainer);
    let after = trainer.weights.named_tensors();
    for ((name, b), (n2, t)) in before.iter().zip(after.iter()) {
        assert_eq!(name, n2);
        assert_eq!(b.as_slice(), t.data(), "{name} changed under lr 0");
    }
}

#[test]
fn fresh_policy_has_unit_ratio_and_zero_clip_fraction() {
    // one update epoch over one minibatch: the first minibatch recomputes
    // the exact collection-time distribution, so every ratio is 1
    let mut trainer = tiny_trainer(2, 1);
    trainer.ppo_cfg.epochs = 1;
    trainer.ppo_cfg.num_minibatches = 1;
    trainer.lr = 0.0; // isolate the measurement from optimization
    let record = rollout_once(&mut trainer);
    assert!(record.clip_fraction == 0.0, "clip fraction {}", record.clip_fraction);
    assert!(record.kl.abs() < 1e-10, "kl {}", record.kl);
}

#[test]
fn training_is_bitwise_reproducible() {
    let run = || {
        let mut trainer = tiny_trainer(3, 3);
        let mut lines = Vec::new();
        for _ in 0..3 {
            lines.push(trainer.run_epoch().unwrap().to_line());
        }
        let weights: Vec<Vec<f64>> = trainer
            .weights
            .named_tensors()
            .into_iter()
            .map(|(_, t)| t.data().to_vec())
            .collect();
        (lines, weights)
    };
    let (l1, w1) = run();
    let (l2, w2) = run();
    assert_eq!(l1, l2);
    assert_eq!(w1, w2);
}

#[test]
fn non_finite_rewards_abort_the_update() {
    let (mut weights, _model) = tiny_weights(4);
    let cfg = PPOConfig {
        env_count: 2,
        steps_per_env: 3,
        num_minibatches: 1,
        ..Default::default()
    };
    let enc_cfg = weights.encoder.config().clone();
    let scan = attnloco_core::encoder::MapScan::from_z_grid(&enc_cfg, &vec![0.0; enc_cfg.tokens()]).unwrap();
    let obs = attnloco_core::heads::bundle_from_parts(scan, vec![0.0; enc_cfg.proprio_dim], true);
    let a = weights.policy_cfg.action_dim;
    let mut buffer = RolloutBuffer::new(3, 2, a);
    buffer.old_std = vec![1.0; a];
    for _ in 0..6 {
        buffer
            .push(
                obs.clone(),
                obs.clone(),
                &vec![0.0; a],
                &vec![0.0; a],
                -1.0,
                0.0,
                f64::NAN,
                false,
            )
            .unwrap();
    }
    let shapes: Vec<Vec<usize>> = weights
        .named_tensors()
        .iter()
        .map(|(_, t)| t.shape().to_vec())
        .collect();
    let mut adam = Adam::new(&shapes);
    let before: Vec<Vec<f64>> = weights
        .named_tensors()
        .into_iter()
        .map(|(_, t)| t.data().to_vec())
        .collect();
    let mut lr = 1.0e-3;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let stats = ppo_update(&buffer, &mut weights, &mut adam, &cfg, 1, &mut lr, &mut rng).unwrap();
    assert!(stats.aborted);
    let after: Vec<Vec<f64>> = weights
        .named_tensors()
        .into_iter()
        .map(|(_, t)| t.data().to_vec())
        .collect();
    assert_eq!(before, after, "aborted update must not touch weights");
}

#[test]
fn stage_plans_select_the_documented_terrain_sets() {
    use attnloco_core::terrain::TerrainFamily;
    let s1 = StagePlan::stage1(RobotProfile::Quadruped, 10);
    assert!(s1.actor_privileged);
    assert_eq!(s1.families, TerrainFamily::base_set(RobotProfile::Quadruped));
    let s2 = StagePlan::stage2(RobotProfile::Quadruped, 10);
    assert!(!s2.actor_privileged);
    assert_eq!(s2.families.len(), 12);
    for f in TerrainFamily::finetune_set(RobotProfile::Quadruped) {
        assert!(s2.families.contains(f));
    }
}

#[test]
fn terrain_level_log_is_the_mean_agent_level() {
    let trainer = tiny_trainer(5, 1);
    // fixed level 0 pins every agent
    assert_eq!(trainer.mean_terrain_level(), 0.0);
}

#[test]
fn gradient_check_on_ppo_surrogate_minibatch() {
    // reverse-mode gradient of the full PPO loss (surrogate + value +
    // entropy) against central finite differences on a fixed minibatch
    use attnloco_core::tensor::{grad_check_multi, Graph, Tensor};

    let (weights, _model) = tiny_weights(6);
    let enc_cfg = weights.encoder.config().clone();
    let a_dim = weights.policy_cfg.action_dim;
    let batch = 3usize;

    let mut rng = ChaCha8Rng::seed_from_u64(7);
    use rand::Rng;
    let mut scan_data = Vec::new();
    let mut prop_data = Vec::new();
    for _ in 0..batch {
        for i in 0..enc_cfg.length {
            for j in 0..enc_cfg.width {
                scan_data.push(enc_cfg.grid_x(i));
                scan_data.push(enc_cfg.grid_y(j));
                scan_data.push(rng.gen_range(-0.2..0.2));
            }
        }
        for _ in 0..enc_cfg.proprio_dim {
            prop_data.push(rng.gen_range(-0.5..0.5));
        }
    }
    let scans =
        Tensor::<f64>::new(&[batch, enc_cfg.length, enc_cfg.width, 3], scan_data).unwrap();
    let proprio = Tensor::<f64>::new(&[batch, enc_cfg.proprio_dim], prop_data).unwrap();
    let actions: Vec<f64> = (0..batch * a_dim).map(|_| rng.gen_range(-0.5..0.5)).collect();
    let old_logp: Vec<f64> = (0..batch).map(|_| rng.gen_range(-14.0..-10.0)).collect();
    let adv: Vec<f64> = (0..batch).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let ret: Vec<f64> = (0..batch).map(|_| rng.gen_range(-1.0..1.0)).collect();

    let tensors: Vec<Tensor<f64>> = weights
        .named_tensors()
        .into_iter()
        .map(|(_, t)| t.clone())
        .collect();

    let loss_fn = |g: &Graph<f64>, vars: &[attnloco_core::tensor::Var]| {
        let bound = weights.bind_with_vars(g, vars)?;
        let scans_v = g.constant(scans.clone());
        let prop_v = g.constant(proprio.clone());
        let (mean, _) = bound.actor_mean(g, scans_v, prop_v)?;
        let value = g.reshape(bound.critic_value(g, scans_v, prop_v)?, &[batch])?;
        let log_std = bound.log_std_var();

        let actions_v = g.constant(Tensor::new(&[batch, a_dim], actions.clone())?);
        let diff = g.sub(actions_v, mean)?;
        let sq = g.mul(diff, diff)?;
        let inv_var = g.exp(g.mul_const(log_std, -2.0));
        let inv_var_row = g.reshape(inv_var, &[a_dim])?;
        let weighted = g.mul_row(sq, inv_var_row)?;
        let half_maha = g.mul_const(g.sum_axis(weighted, 1)?, -0.5);
        let sum_log_std = g.sum_all(log_std);
        let log_two_pi = (2.0 * std::f64::consts::PI).ln();
        let logp_new = g.add_const(
            g.add_scalar_var(half_maha, g.neg(sum_log_std))?,
            -(a_dim as f64) / 2.0 * log_two_pi,
        );
        let old_v = g.constant(Tensor::new(&[batch], old_logp.clone())?);
        let ratio = g.exp(g.sub(logp_new, old_v)?);
        let adv_v = g.constant(Tensor::new(&[batch], adv.clone())?);
        let surr = attnloco_core::ppo::clipped_surrogate(g, ratio, adv_v, 0.2)?;
        let policy_loss = g.neg(g.mean_all(surr));
        let ret_v = g.constant(Tensor::new(&[batch], ret.clone())?);
        let vdiff = g.sub(value, ret_v)?;
        let value_loss = g.mean_all(g.mul(vdiff, vdiff)?);
        let entropy = g.add_const(g.sum_all(log_std), a_dim as f64 / 2.0 * (1.0 + log_two_pi));
        g.sub(g.add(policy_loss, value_loss)?, g.mul_const(entropy, 0.005))
    };
    let err = grad_check_multi(loss_fn, &tensors, 1e-5).unwrap();
    assert!(err < 1e-4, "ppo surrogate gradient error {err}");
}
