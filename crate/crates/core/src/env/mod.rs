//! Kinematic foothold-placement surrogate environment.
//!
//! The robot is a base with F feet. Each leg has three joints interpreted
//! through a fixed linear kinematic map: the first two joints command the
//! foot's fore-aft/lateral offset from its nominal stance position (meters
//! per radian via `offset_gain`), the third lifts the foot; a foot is in
//! swing whenever its lift joint exceeds `lift_threshold`. Stance feet are
//! anchored to the terrain, and the base pose is the least-squares fit
//! (2-D Procrustes over stance anchors) that keeps anchored feet consistent
//! with the commanded leg offsets, so locomotion emerges from sweeping
//! stance legs backwards while swing legs recover.
//!
//! The kinematic map includes a reflexive swing: once an anchored leg has
//! converged onto its commanded offset (no further base motion available
//! from it) and enough other feet are in stance, the leg automatically
//! swings to the mirrored offset, from where joint tracking sweeps it back
//! through its workspace. A constant action therefore produces sustained
//! walking whose speed and direction follow the commanded offsets, while
//! the policy keeps full authority over foot placement through the offset
//! joints and can hold a foot airborne with its lift joint.
//!
//! A swing foot touching down may land only on steppable cells within reach
//! and step height; landing on void or out of reach counts a collision and
//! the foot stays in the air. Torques are the proxy `gain * (target - q)`,
//! contact forces share the torso weight over stance feet, and
//! accelerations come from finite differences over the control step.

mod obs;
mod reward;
mod trace;

pub use obs::{assemble_observation, ObservationBundle, RandomizationConfig};
pub use reward::{compute_reward, reward_rows, RewardBreakdown, RewardRow, RewardWeights};
pub use trace::{read_trace, write_trace, EpisodeTrace, TraceStep};

use crate::encoder::EncoderConfig;
use crate::error::{Error, Result};
use crate::terrain::{
    generate, BasePose, CurriculumState, HeightField, RobotProfile, TerrainGenConfig, TerrainSpec,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

const GRAVITY: f64 = 9.81;

/// Duration of a reflexive swing, control steps.
const SWING_STEPS: u8 = 8;
/// Apex height of the reflexive swing arc, meters.
const SWING_HEIGHT: f64 = 0.08;
/// Hard cap on base translation speed, m/s.
const MAX_BASE_SPEED: f64 = 3.0;
/// Hard cap on base yaw rate, rad/s.
const MAX_YAW_RATE: f64 = 4.0;

/// Fixed robot description for the surrogate.
#[derive(Clone, Debug)]
pub struct RobotModel {
    pub profile: RobotProfile,
    pub foot_count: usize,
    /// 3 leg joints per foot plus `extra_joints` posture joints.
    pub joint_count: usize,
    pub extra_joints: usize,
    pub default_joint_pos: Vec<f64>,
    pub joint_limit: Vec<f64>,
    pub vel_limit: Vec<f64>,
    pub torque_limit: Vec<f64>,
    pub base_length: f64,
    pub base_width: f64,
    /// Maximum horizontal leg offset from nominal, meters.
    pub reach: f64,
    pub standing_height: f64,
    pub torso_mass: f64,
    /// Base-frame nominal foot positions.
    pub nominal_feet: Vec<[f64; 2]>,
    /// Meters of foot offset per radian of [fore-aft, lateral, lift] joint.
    pub offset_gain: [f64; 3],
    /// Lift joint angle above which the foot is in swing.
    pub lift_threshold: f64,
    /// Largest elevation change a touchdown accepts, meters.
    pub max_step_height: f64,
    /// First-order joint tracking gain, 1/s.
    pub track_gain: f64,
    /// Torque proxy gain, Nm/rad.
    pub torque_gain: f64,
    /// Joint range penalized by the deviation term (posture joints).
    pub deviation_joints: std::ops::Range<usize>,
    pub tilt_limit: f64,
    pub max_air_steps: u32,
}

impl RobotModel {
    pub fn quadruped() -> Self {
        let legs = 4;
        let joints = legs * 3;
        RobotModel {
            profile: RobotProfile::Quadruped,
            foot_count: legs,
            joint_count: joints,
            extra_joints: 0,
            default_joint_pos: vec![0.0; joints],
            joint_limit: vec![1.2, 1.2, 1.6].repeat(legs),
            vel_limit: vec![8.0; joints],
            torque_limit: vec![80.0; joints],
            base_length: 0.60,
            base_width: 0.44,
            reach: 0.34,
            standing_height: 0.50,
            torso_mass: 50.0,
            nominal_feet: vec![[0.30, 0.22], [0.30, -0.22], [-0.30, 0.22], [-0.30, -0.22]],
            offset_gain: [0.30, 0.20, 0.25],
            lift_threshold: 0.40,
            max_step_height: 0.35,
            track_gain: 15.0,
            torque_gain: 55.0,
            deviation_joints: 0..0,
            tilt_limit: 0.70,
            max_air_steps: 25,
        }
    }

    pub fn biped() -> Self {
        let legs = 2;
        let extra = 4;
        let joints = legs * 3 + extra;
        let mut joint_limit = vec![1.2, 1.0, 1.6].repeat(legs);
        joint_limit.extend(vec![2.0; extra]);
        RobotModel {
            profile: RobotProfile::Biped,
            foot_count: legs,
            joint_count: joints,
            extra_joints: extra,
            default_joint_pos: vec![0.0; joints],
            joint_limit,
            vel_limit: vec![10.0; joints],
            torque_limit: vec![60.0; joints],
            base_length: 0.25,
            base_width: 0.32,
            reach: 0.42,
            standing_height: 0.85,
            torso_mass: 55.0,
            nominal_feet: vec![[0.0, 0.16], [0.0, -0.16]],
            offset_gain: [0.35, 0.22, 0.28],
            lift_threshold: 0.40,
            max_step_height: 0.32,
            track_gain: 15.0,
            torque_gain: 45.0,
            deviation_joints: 6..10,
            tilt_limit: 0.60,
            max_air_steps: 20,
        }
    }

    pub fn for_profile(profile: RobotProfile) -> Self {
        match profile {
            RobotProfile::Quadruped => RobotModel::quadruped(),
            RobotProfile::Biped => RobotModel::biped(),
        }
    }

    /// Proprioception dimension: 3 velocities + 3 rates + 3 gravity +
    /// 3 * joints + 3 command.
    pub fn proprio_dim(&self) -> usize {
        12 + 3 * self.joint_count
    }
}

/// Command sampling ranges.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CommandConfig {
    pub vx: (f64, f64),
    pub vy: (f64, f64),
    pub yaw_rate: (f64, f64),
    /// Probability of a zero (standing) command episode.
    pub zero_prob: f64,
}

impl Default for CommandConfig {
    fn default() -> Self {
        CommandConfig {
            vx: (-1.0, 1.0),
            vy: (-0.5, 0.5),
            yaw_rate: (-1.0, 1.0),
            zero_prob: 0.05,
        }
    }
}

/// Environment stepping configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvConfig {
    /// Control step, seconds (50 Hz decisions).
    pub control_dt: f64,
    /// Scale from action units to joint radians around the defaults.
    pub action_scale: f64,
    pub episode_seconds: f64,
    /// Command norm below which the robot counts as standing.
    pub standing_threshold: f64,
    pub commands: CommandConfig,
}

impl Default for EnvConfig {
    fn default() -> Self {
        EnvConfig {
            control_dt: 0.02,
            action_scale: 0.5,
            episode_seconds: 20.0,
            standing_threshold: 0.1,
            commands: CommandConfig::default(),
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.control_dt > 0.0 && self.control_dt < 1.0) {
            return Err(Error::config("env.control_dt", "must be in (0, 1) seconds"));
        }
        if !(self.action_scale > 0.0) {
            return Err(Error::config("env.action_scale", "must be positive"));
        }
        if !(self.episode_seconds > 0.0) {
            return Err(Error::config("env.episode_seconds", "must be positive"));
        }
        Ok(())
    }

    pub fn episode_steps(&self) -> u64 {
        (self.episode_seconds / self.control_dt).round() as u64
    }
}

/// Full simulation state; everything the reward system reads.
#[derive(Clone, Debug, PartialEq)]
pub struct SimState {
    pub base_pos: [f64; 3],
    pub yaw: f64,
    /// Roll/pitch proxies derived from stance-feet elevations.
    pub tilt: [f64; 2],
    /// Base-frame linear velocity.
    pub base_lin_vel: [f64; 3],
    /// Roll, pitch, yaw rates.
    pub base_ang_vel: [f64; 3],
    pub feet_pos: Vec<[f64; 3]>,
    pub feet_vel: Vec<[f64; 3]>,
    pub feet_contact: Vec<bool>,
    /// Contact force magnitude proxy per foot, newtons.
    pub feet_force: Vec<f64>,
    pub q: Vec<f64>,
    pub qd: Vec<f64>,
    pub qdd: Vec<f64>,
    pub tau: Vec<f64>,
    pub prev_action: Vec<f64>,
    pub command: [f64; 3],
    pub step_count: u64,
    pub standing: bool,
    pub air_steps: u32,
    /// Remaining reflexive-swing steps per foot; 0 when not auto-swinging.
    pub swing_timer: Vec<u8>,
    /// Base-frame offset a reflexive swing is heading for.
    pub swing_target: Vec<[f64; 2]>,
    /// Episode-constant randomizations.
    pub torso_mass: f64,
    pub friction: f64,
    pub map_drift: [f64; 2],
    pub faulted: bool,
}

/// Per-step outcome flags.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct StepInfo {
    pub terminated: bool,
    pub fault: bool,
    pub collisions: u32,
    pub zero_contact: bool,
    pub walked_out: bool,
}

/// One simulated robot on one terrain tile.
pub struct SimEnv {
    pub model: RobotModel,
    pub cfg: EnvConfig,
    pub terrain_cfg: TerrainGenConfig,
    pub field: HeightField,
    pub state: SimState,
    rng: ChaCha8Rng,
}

impl SimEnv {
    /// Build an environment with a flat default field; call `reset` before
    /// stepping.
    pub fn new(model: RobotModel, cfg: EnvConfig, terrain_cfg: TerrainGenConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        terrain_cfg.validate()?;
        let field = generate(
            &TerrainSpec::new(crate::terrain::TerrainFamily::Rough, 0, seed)?,
            &terrain_cfg,
        )?;
        let state = initial_state(&model, &field, [0.0; 3], 0.0, [0.0; 2], model.torso_mass, 1.0);
        Ok(SimEnv {
            model,
            cfg,
            terrain_cfg,
            field,
            state,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    pub fn rng_state(&self) -> (u64, u128) {
        (u64::from_le_bytes(self.rng.get_seed()[..8].try_into().unwrap()), self.rng.get_word_pos())
    }

    pub fn restore_rng(&mut self, seed: [u8; 32], word_pos: u128) {
        self.rng = ChaCha8Rng::from_seed(seed);
        self.rng.set_word_pos(word_pos);
    }

    pub fn rng_seed_bytes(&self) -> [u8; 32] {
        self.rng.get_seed()
    }

    pub fn base_pose(&self) -> BasePose {
        BasePose {
            x: self.state.base_pos[0],
            y: self.state.base_pos[1],
            z: self.state.base_pos[2],
            yaw: self.state.yaw,
        }
    }

    /// Spawn on the tile assigned by the curriculum, resampling the
    /// episode-constant randomizations.
    pub fn reset(&mut self, curriculum: &CurriculumState, rand: &RandomizationConfig) -> Result<()> {
        let terrain_seed = self.rng.gen::<u64>();
        let spec = TerrainSpec::new(curriculum.family, curriculum.level, terrain_seed)?;
        self.field = generate(&spec, &self.terrain_cfg)?;

        let mass = self.model.torso_mass * self.rng.gen_range(rand.mass_range.0..=rand.mass_range.1);
        let friction = self.rng.gen_range(rand.friction_range.0..=rand.friction_range.1);
        let drift = [
            sample_normal(&mut self.rng, rand.drift_sigma),
            sample_normal(&mut self.rng, rand.drift_sigma),
        ];
        let yaw = self.rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI);
        let command = self.sample_command();
        self.state = initial_state(&self.model, &self.field, [0.0, 0.0, 0.0], yaw, drift, mass, friction);
        self.state.command = command;
        self.state.standing = command_norm(command) < self.cfg.standing_threshold;
        Ok(())
    }

    fn sample_command(&mut self) -> [f64; 3] {
        let c = &self.cfg.commands;
        if self.rng.gen_bool(c.zero_prob.clamp(0.0, 1.0)) {
            return [0.0; 3];
        }
        let span = |r: (f64, f64), rng: &mut ChaCha8Rng| {
            if r.1 > r.0 {
                rng.gen_range(r.0..r.1)
            } else {
                r.0
            }
        };
        [
            span(c.vx, &mut self.rng),
            span(c.vy, &mut self.rng),
            span(c.yaw_rate, &mut self.rng),
        ]
    }

    /// Artificial push: overwrite the base twist with a bounded random twist
    /// at the configured interval. Returns whether a push fired.
    pub fn apply_push(&mut self, rand: &RandomizationConfig) -> bool {
        if rand.push_interval_steps == 0 || rand.push_max_lin <= 0.0 {
            return false;
        }
        if self.state.step_count == 0 || self.state.step_count % rand.push_interval_steps != 0 {
            return false;
        }
        let mag = self.rng.gen_range(0.0..rand.push_max_lin);
        let dir = self.rng.gen_range(0.0..std::f64::consts::TAU);
        let (vx, vy) = (mag * dir.cos(), mag * dir.sin());
        let wz = self.rng.gen_range(-rand.push_max_ang..rand.push_max_ang);
        self.state.base_lin_vel[0] = vx;
        self.state.base_lin_vel[1] = vy;
        self.state.base_ang_vel[2] = wz;
        // the jolt also displaces the base one control step along the new twist
        let (s, c) = self.state.yaw.sin_cos();
        self.state.base_pos[0] += (vx * c - vy * s) * self.cfg.control_dt;
        self.state.base_pos[1] += (vx * s + vy * c) * self.cfg.control_dt;
        self.state.yaw += wz * self.cfg.control_dt;
        true
    }

    /// Advance one control step.
    pub fn step(&mut self, action: &[f64]) -> StepInfo {
        let model = &self.model;
        let dt = self.cfg.control_dt;
        let mut info = StepInfo::default();

        if action.len() != model.joint_count || action.iter().any(|a| !a.is_finite()) {
            self.state.faulted = true;
            info.fault = true;
            info.terminated = true;
            return info;
        }

        let prev = self.state.clone();
        let st = &mut self.state;

        // joint dynamics: rate-limited first-order tracking of the targets
        let mut q_target = vec![0.0; model.joint_count];
        for j in 0..model.joint_count {
            let t = model.default_joint_pos[j] + self.cfg.action_scale * action[j];
            q_target[j] = t.clamp(-model.joint_limit[j] * 1.05, model.joint_limit[j] * 1.05);
        }
        let mut q_new = vec![0.0; model.joint_count];
        for j in 0..model.joint_count {
            let want = (q_target[j] - st.q[j]) * model.track_gain;
            let rate = want.clamp(-model.vel_limit[j] * 1.1, model.vel_limit[j] * 1.1);
            q_new[j] = st.q[j] + rate * dt;
        }

        // leg offsets from the kinematic map
        let mut offsets = vec![[0.0f64; 2]; model.foot_count];
        let mut lift_active = vec![false; model.foot_count];
        let mut lift_height = vec![0.0f64; model.foot_count];
        for f in 0..model.foot_count {
            offsets[f] = [
                model.offset_gain[0] * q_new[3 * f],
                model.offset_gain[1] * q_new[3 * f + 1],
            ];
            let lift = q_new[3 * f + 2];
            lift_active[f] = lift > model.lift_threshold;
            lift_height[f] = model.offset_gain[2] * (lift - model.lift_threshold).max(0.0);
        }

        // swing transitions: lifting breaks contact and cancels any reflex
        for f in 0..model.foot_count {
            if lift_active[f] {
                st.swing_timer[f] = 0;
                if st.feet_contact[f] {
                    st.feet_contact[f] = false;
                }
            }
        }

        // reflexive swing trigger: an anchored leg whose offset joints have
        // converged onto a non-trivial commanded offset has no base motion
        // left to give; swing it to the mirrored offset while more than half
        // of the feet stay in stance
        let mut stance_count = (0..model.foot_count).filter(|&f| st.feet_contact[f]).count();
        for f in 0..model.foot_count {
            if !st.feet_contact[f] || lift_active[f] || stance_count <= model.foot_count / 2 + 1 {
                continue;
            }
            let cmd_off = [
                model.offset_gain[0] * q_target[3 * f],
                model.offset_gain[1] * q_target[3 * f + 1],
            ];
            let cmd_norm = (cmd_off[0] * cmd_off[0] + cmd_off[1] * cmd_off[1]).sqrt();
            let converged = (q_new[3 * f] - q_target[3 * f]).abs() < 0.05
                && (q_new[3 * f + 1] - q_target[3 * f + 1]).abs() < 0.05;
            if cmd_norm >= 0.05 && converged {
                let scale = (0.9 * model.reach / cmd_norm).min(1.0);
                st.feet_contact[f] = false;
                st.swing_timer[f] = SWING_STEPS;
                st.swing_target[f] = [-cmd_off[0] * scale, -cmd_off[1] * scale];
                stance_count -= 1;
            }
        }

        // base pose from stance anchors (2-D Procrustes)
        let stance: Vec<usize> = (0..model.foot_count).filter(|&f| st.feet_contact[f]).collect();
        let (mut new_xy, mut new_yaw);
        if stance.is_empty() {
            // coast on the previous base-frame velocity
            let (s, c) = st.yaw.sin_cos();
            new_xy = [
                st.base_pos[0] + (st.base_lin_vel[0] * c - st.base_lin_vel[1] * s) * dt,
                st.base_pos[1] + (st.base_lin_vel[0] * s + st.base_lin_vel[1] * c) * dt,
            ];
            new_yaw = st.yaw + st.base_ang_vel[2] * dt;
        } else {
            let mut a_mean = [0.0f64; 2];
            let mut l_mean = [0.0f64; 2];
            let legs: Vec<[f64; 2]> = stance
                .iter()
                .map(|&f| {
                    [
                        model.nominal_feet[f][0] + offsets[f][0],
                        model.nominal_feet[f][1] + offsets[f][1],
                    ]
                })
                .collect();
            for (k, &f) in stance.iter().enumerate() {
                a_mean[0] += st.feet_pos[f][0];
                a_mean[1] += st.feet_pos[f][1];
                l_mean[0] += legs[k][0];
                l_mean[1] += legs[k][1];
            }
            let n = stance.len() as f64;
            a_mean = [a_mean[0] / n, a_mean[1] / n];
            l_mean = [l_mean[0] / n, l_mean[1] / n];
            if stance.len() == 1 {
                new_yaw = st.yaw;
            } else {
                let mut sxx = 0.0;
                let mut sxy = 0.0;
                for (k, &f) in stance.iter().enumerate() {
                    let lx = legs[k][0] - l_mean[0];
                    let ly = legs[k][1] - l_mean[1];
                    let ax = st.feet_pos[f][0] - a_mean[0];
                    let ay = st.feet_pos[f][1] - a_mean[1];
                    sxx += lx * ax + ly * ay;
                    sxy += lx * ay - ly * ax;
                }
                new_yaw = if sxx.abs() < 1e-12 && sxy.abs() < 1e-12 {
                    st.yaw
                } else {
                    sxy.atan2(sxx)
                };
                // keep the branch continuous with the previous yaw
                while new_yaw - st.yaw > std::f64::consts::PI {
                    new_yaw -= std::f64::consts::TAU;
                }
                while new_yaw - st.yaw < -std::f64::consts::PI {
                    new_yaw += std::f64::consts::TAU;
                }
            }
            let (s, c) = new_yaw.sin_cos();
            new_xy = [
                a_mean[0] - (l_mean[0] * c - l_mean[1] * s),
                a_mean[1] - (l_mean[0] * s + l_mean[1] * c),
            ];
        }

        // base rate caps: least-squares refits can jump when the stance set
        // changes; bound the base motion per control step so residuals are
        // absorbed over a few steps instead
        {
            let max_step = MAX_BASE_SPEED * dt;
            let dx = new_xy[0] - st.base_pos[0];
            let dy = new_xy[1] - st.base_pos[1];
            let norm = (dx * dx + dy * dy).sqrt();
            if norm > max_step {
                let k = max_step / norm;
                new_xy[0] = st.base_pos[0] + dx * k;
                new_xy[1] = st.base_pos[1] + dy * k;
            }
            let dyaw = wrap_angle(new_yaw - st.yaw);
            let max_yaw = MAX_YAW_RATE * dt;
            if dyaw.abs() > max_yaw {
                new_yaw = st.yaw + max_yaw.copysign(dyaw);
            }
        }

        // traction cap: stance feet slip when the required acceleration
        // exceeds what friction can transmit
        if !stance.is_empty() {
            let (s, c) = st.yaw.sin_cos();
            let v_prev_world = [
                st.base_lin_vel[0] * c - st.base_lin_vel[1] * s,
                st.base_lin_vel[0] * s + st.base_lin_vel[1] * c,
            ];
            let v_new_world = [
                (new_xy[0] - st.base_pos[0]) / dt,
                (new_xy[1] - st.base_pos[1]) / dt,
            ];
            let acc = [
                (v_new_world[0] - v_prev_world[0]) / dt,
                (v_new_world[1] - v_prev_world[1]) / dt,
            ];
            let acc_norm = (acc[0] * acc[0] + acc[1] * acc[1]).sqrt();
            let cap = st.friction * GRAVITY;
            if acc_norm > cap {
                let slip_frac = 1.0 - cap / acc_norm;
                let slip = [
                    (new_xy[0] - st.base_pos[0]) * slip_frac,
                    (new_xy[1] - st.base_pos[1]) * slip_frac,
                ];
                for &f in &stance {
                    st.feet_pos[f][0] += slip[0];
                    st.feet_pos[f][1] += slip[1];
                    st.feet_vel[f][0] += slip[0] / dt;
                    st.feet_vel[f][1] += slip[1] / dt;
                    let h = self.field.height_at(st.feet_pos[f][0], st.feet_pos[f][1]);
                    if self.field.support_at(st.feet_pos[f][0], st.feet_pos[f][1]) {
                        st.feet_pos[f][2] = h;
                    } else {
                        st.feet_contact[f] = false;
                    }
                }
                new_xy[0] += slip[0];
                new_xy[1] += slip[1];
            }
        }

        // stance feet dragged back into the workspace when overextended
        let (s_new, c_new) = new_yaw.sin_cos();
        for f in 0..model.foot_count {
            if !st.feet_contact[f] {
                st.feet_vel[f] = [0.0; 3];
                continue;
            }
            let rel_x = st.feet_pos[f][0] - new_xy[0];
            let rel_y = st.feet_pos[f][1] - new_xy[1];
            // world -> base frame
            let bx = rel_x * c_new + rel_y * s_new - model.nominal_feet[f][0];
            let by = -rel_x * s_new + rel_y * c_new - model.nominal_feet[f][1];
            let off_norm = (bx * bx + by * by).sqrt();
            if off_norm > model.reach {
                let scale = model.reach / off_norm;
                let tx = bx * scale + model.nominal_feet[f][0];
                let ty = by * scale + model.nominal_feet[f][1];
                let wx = new_xy[0] + tx * c_new - ty * s_new;
                let wy = new_xy[1] + tx * s_new + ty * c_new;
                let slip_x = wx - st.feet_pos[f][0];
                let slip_y = wy - st.feet_pos[f][1];
                st.feet_vel[f][0] += slip_x / dt;
                st.feet_vel[f][1] += slip_y / dt;
                st.feet_pos[f][0] = wx;
                st.feet_pos[f][1] = wy;
                if self.field.support_at(wx, wy) {
                    st.feet_pos[f][2] = self.field.height_at(wx, wy);
                } else {
                    st.feet_contact[f] = false;
                }
            } else {
                st.feet_vel[f] = [0.0; 3];
            }
        }

        // base height tracks the stance surface
        let stance_after: Vec<usize> =
            (0..model.foot_count).filter(|&f| st.feet_contact[f]).collect();
        let mut new_z = st.base_pos[2];
        if !stance_after.is_empty() {
            let mean_z: f64 =
                stance_after.iter().map(|&f| st.feet_pos[f][2]).sum::<f64>() / stance_after.len() as f64;
            let target = mean_z + model.standing_height;
            let alpha = (8.0 * dt).min(1.0);
            new_z += alpha * (target - new_z);
        }

        // swing feet: reflexive swings carry both the foot and its offset
        // joints toward the mirrored pose; manually lifted feet track the
        // commanded offsets
        for f in 0..model.foot_count {
            if st.feet_contact[f] {
                continue;
            }
            let (tx, ty, wz) = if st.swing_timer[f] > 0 {
                // drive the offset joints to the mirror pose so that joint
                // tracking sweeps them back through the workspace afterwards
                let remaining = f64::from(st.swing_timer[f]);
                let q_mirror = [
                    st.swing_target[f][0] / model.offset_gain[0],
                    st.swing_target[f][1] / model.offset_gain[1],
                ];
                for (axis, qm) in q_mirror.iter().enumerate() {
                    let j = 3 * f + axis;
                    q_new[j] = st.q[j] + (qm - st.q[j]) / remaining;
                }
                let phase = 1.0 - remaining / f64::from(SWING_STEPS);
                let arc = SWING_HEIGHT * (std::f64::consts::PI * phase.clamp(0.0, 1.0)).sin();
                (
                    model.nominal_feet[f][0] + st.swing_target[f][0],
                    model.nominal_feet[f][1] + st.swing_target[f][1],
                    new_z - model.standing_height + arc,
                )
            } else {
                (
                    model.nominal_feet[f][0] + offsets[f][0],
                    model.nominal_feet[f][1] + offsets[f][1],
                    new_z - model.standing_height + lift_height[f],
                )
            };
            let gx = new_xy[0] + tx * c_new - ty * s_new;
            let gy = new_xy[1] + tx * s_new + ty * c_new;
            let (wx, wy) = if st.swing_timer[f] > 1 {
                // close the remaining distance evenly over the timer
                let frac = 1.0 / f64::from(st.swing_timer[f]);
                (
                    st.feet_pos[f][0] + (gx - st.feet_pos[f][0]) * frac,
                    st.feet_pos[f][1] + (gy - st.feet_pos[f][1]) * frac,
                )
            } else {
                (gx, gy)
            };
            st.feet_vel[f] = [
                (wx - st.feet_pos[f][0]) / dt,
                (wy - st.feet_pos[f][1]) / dt,
                (wz - st.feet_pos[f][2]) / dt,
            ];
            st.feet_pos[f] = [wx, wy, wz];
            if st.swing_timer[f] > 0 {
                st.swing_timer[f] -= 1;
            }
        }

        // joint velocity, acceleration and torque proxies from the final
        // joint state of this step
        let qd_new: Vec<f64> = (0..model.joint_count)
            .map(|j| (q_new[j] - st.q[j]) / dt)
            .collect();
        let qdd: Vec<f64> = (0..model.joint_count)
            .map(|j| (qd_new[j] - st.qd[j]) / dt)
            .collect();
        let tau: Vec<f64> = (0..model.joint_count)
            .map(|j| model.torque_gain * (q_target[j] - q_new[j]))
            .collect();

        // touchdown attempts: airborne feet with the lift joint down and no
        // reflexive swing still in flight
        for f in 0..model.foot_count {
            if st.feet_contact[f] || lift_active[f] || st.swing_timer[f] > 0 {
                continue;
            }
            let was_reflex = st.swing_target[f] != [0.0, 0.0];
            let wx = st.feet_pos[f][0];
            let wy = st.feet_pos[f][1];
            let off_norm = if was_reflex {
                (st.swing_target[f][0].powi(2) + st.swing_target[f][1].powi(2)).sqrt()
            } else {
                (offsets[f][0].powi(2) + offsets[f][1].powi(2)).sqrt()
            };
            let ground = self.field.height_at(wx, wy);
            let expected = new_z - model.standing_height;
            let ok = self.field.support_at(wx, wy)
                && (ground - expected).abs() <= model.max_step_height
                && off_norm <= model.reach;
            if ok {
                st.feet_contact[f] = true;
                st.feet_pos[f][2] = ground;
                st.feet_vel[f] = [0.0; 3];
                st.swing_target[f] = [0.0, 0.0];
            } else {
                info.collisions += 1;
                if was_reflex {
                    // retry closer to the nominal stance point
                    st.swing_target[f][0] *= 0.6;
                    st.swing_target[f][1] *= 0.6;
                    st.swing_timer[f] = SWING_STEPS / 2;
                    if st.swing_target[f][0].abs() < 1e-3 && st.swing_target[f][1].abs() < 1e-3 {
                        st.swing_target[f] = [0.0, 0.0];
                    }
                }
            }
        }

        // velocities, tilt proxy, forces
        let contacts: Vec<usize> = (0..model.foot_count).filter(|&f| st.feet_contact[f]).collect();
        let v_world = [
            (new_xy[0] - st.base_pos[0]) / dt,
            (new_xy[1] - st.base_pos[1]) / dt,
            (new_z - st.base_pos[2]) / dt,
        ];
        let (s2, c2) = new_yaw.sin_cos();
        let v_base = [
            v_world[0] * c2 + v_world[1] * s2,
            -v_world[0] * s2 + v_world[1] * c2,
            v_world[2],
        ];
        let yaw_rate = wrap_angle(new_yaw - st.yaw) / dt;

        let tilt_meas = tilt_proxy(model, st, new_xy, new_yaw, &contacts, prev.tilt);
        let alpha_t = (10.0 * dt).min(1.0);
        let new_tilt = [
            st.tilt[0] + alpha_t * (tilt_meas[0] - st.tilt[0]),
            st.tilt[1] + alpha_t * (tilt_meas[1] - st.tilt[1]),
        ];
        let tilt_rate = [
            (new_tilt[0] - st.tilt[0]) / dt,
            (new_tilt[1] - st.tilt[1]) / dt,
        ];

        let n_stance = contacts.len();
        for f in 0..model.foot_count {
            st.feet_force[f] = if st.feet_contact[f] {
                st.torso_mass * GRAVITY / n_stance as f64
            } else {
                0.0
            };
        }

        st.base_pos = [new_xy[0], new_xy[1], new_z];
        st.yaw = new_yaw;
        st.tilt = new_tilt;
        st.base_lin_vel = v_base;
        st.base_ang_vel = [tilt_rate[0], tilt_rate[1], yaw_rate];
        st.q = q_new;
        st.qd = qd_new;
        st.qdd = qdd;
        st.tau = tau;
        st.prev_action = action.to_vec();
        st.step_count += 1;
        st.standing = command_norm(st.command) < self.cfg.standing_threshold;

        info.zero_contact = n_stance == 0;
        st.air_steps = if info.zero_contact { st.air_steps + 1 } else { 0 };

        info.walked_out = !self.field.border.contains(new_xy[0], new_xy[1]);
        if st.air_steps >= model.max_air_steps
            || st.tilt[0].abs() > model.tilt_limit
            || st.tilt[1].abs() > model.tilt_limit
        {
            info.terminated = true;
        }
        info
    }
}

fn command_norm(c: [f64; 3]) -> f64 {
    (c[0] * c[0] + c[1] * c[1] + c[2] * c[2]).sqrt()
}

fn wrap_angle(a: f64) -> f64 {
    let mut a = a;
    while a > std::f64::consts::PI {
        a -= std::f64::consts::TAU;
    }
    while a < -std::f64::consts::PI {
        a += std::f64::consts::TAU;
    }
    a
}

fn sample_normal(rng: &mut ChaCha8Rng, sigma: f64) -> f64 {
    use rand_distr::{Distribution, Normal};
    if sigma <= 0.0 {
        return 0.0;
    }
    Normal::new(0.0, sigma).expect("sigma > 0").sample(rng)
}

/// Roll/pitch estimate from stance feet elevations.
fn tilt_proxy(
    model: &RobotModel,
    st: &SimState,
    base_xy: [f64; 2],
    yaw: f64,
    contacts: &[usize],
    prev: [f64; 2],
) -> [f64; 2] {
    if contacts.len() < 2 {
        return prev;
    }
    let (s, c) = yaw.sin_cos();
    // base-frame positions of stance feet
    let mut front = (0.0, 0usize);
    let mut rear = (0.0, 0usize);
    let mut left = (0.0, 0usize);
    let mut right = (0.0, 0usize);
    for &f in contacts {
        let rx = st.feet_pos[f][0] - base_xy[0];
        let ry = st.feet_pos[f][1] - base_xy[1];
        let bx = rx * c + ry * s;
        let by = -rx * s + ry * c;
        let z = st.feet_pos[f][2];
        if bx >= 0.0 {
            front = (front.0 + z, front.1 + 1);
        } else {
            rear = (rear.0 + z, rear.1 + 1);
        }
        if by >= 0.0 {
            left = (left.0 + z, left.1 + 1);
        } else {
            right = (right.0 + z, right.1 + 1);
        }
    }
    let pitch = if front.1 > 0 && rear.1 > 0 {
        let dz = front.0 / front.1 as f64 - rear.0 / rear.1 as f64;
        (dz / model.base_length).atan()
    } else {
        prev[1]
    };
    let roll = if left.1 > 0 && right.1 > 0 {
        let dz = left.0 / left.1 as f64 - right.0 / right.1 as f64;
        (dz / model.base_width).atan()
    } else {
        prev[0]
    };
    [roll, pitch]
}

/// Unit gravity direction in the base frame for a roll/pitch proxy.
pub fn gravity_in_base(tilt: [f64; 2]) -> [f64; 3] {
    let (roll, pitch) = (tilt[0], tilt[1]);
    [
        pitch.sin(),
        -roll.sin() * pitch.cos(),
        -roll.cos() * pitch.cos(),
    ]
}

fn initial_state(
    model: &RobotModel,
    field: &HeightField,
    base_xy_yaw: [f64; 3],
    yaw: f64,
    drift: [f64; 2],
    mass: f64,
    friction: f64,
) -> SimState {
    let (bx, by) = (base_xy_yaw[0], base_xy_yaw[1]);
    let (s, c) = yaw.sin_cos();
    let mut feet_pos = Vec::with_capacity(model.foot_count);
    let mut ground = 0.0;
    for f in 0..model.foot_count {
        let nx = model.nominal_feet[f][0];
        let ny = model.nominal_feet[f][1];
        let wx = bx + nx * c - ny * s;
        let wy = by + nx * s + ny * c;
        let h = field.height_at(wx, wy);
        ground += h / model.foot_count as f64;
        feet_pos.push([wx, wy, h]);
    }
    SimState {
        base_pos: [bx, by, ground + model.standing_height],
        yaw,
        tilt: [0.0; 2],
        base_lin_vel: [0.0; 3],
        base_ang_vel: [0.0; 3],
        feet_pos,
        feet_vel: vec![[0.0; 3]; model.foot_count],
        feet_contact: vec![true; model.foot_count],
        feet_force: vec![mass * GRAVITY / model.foot_count as f64; model.foot_count],
        q: model.default_joint_pos.clone(),
        qd: vec![0.0; model.joint_count],
        qdd: vec![0.0; model.joint_count],
        tau: vec![0.0; model.joint_count],
        prev_action: vec![0.0; model.joint_count],
        command: [0.0; 3],
        step_count: 0,
        standing: true,
        air_steps: 0,
        swing_timer: vec![0; model.foot_count],
        swing_target: vec![[0.0; 2]; model.foot_count],
        torso_mass: mass,
        friction,
        map_drift: drift,
        faulted: false,
    }
}

/// Encoder configuration matching a robot's scan grid.
pub fn encoder_config_for(
    model: &RobotModel,
    length: usize,
    width: usize,
    dim: usize,
    heads: usize,
    scan_resolution: f64,
) -> EncoderConfig {
    EncoderConfig {
        length,
        width,
        dim,
        heads,
        query_len: 1,
        proprio_dim: model.proprio_dim(),
        scan_resolution,
    }
}
