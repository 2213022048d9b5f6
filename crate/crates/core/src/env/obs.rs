//! Observation assembly with domain randomization.
//!
//! The privileged variant is exact and drift-free; the noisy variant adds
//! per-term uniform noise and samples the map scan at the episode's drifted
//! position, never perturbing the previous-action and command slots.

use super::{gravity_in_base, SimEnv, SimState};
use crate::encoder::{EncoderConfig, MapScan};
use crate::error::Result;
use crate::terrain::{sample_map_scan, BasePose, HeightField};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Uniform noise half-widths and disturbance parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RandomizationConfig {
    pub lin_vel_noise: f64,
    pub ang_vel_noise: f64,
    pub gravity_noise: f64,
    pub joint_pos_noise: f64,
    pub joint_vel_noise: f64,
    pub scan_z_noise: f64,
    /// Standard deviation of the episode-constant map drift, meters.
    pub drift_sigma: f64,
    pub push_interval_steps: u64,
    pub push_max_lin: f64,
    pub push_max_ang: f64,
    /// Multiplicative torso-mass range.
    pub mass_range: (f64, f64),
    pub friction_range: (f64, f64),
}

impl Default for RandomizationConfig {
    fn default() -> Self {
        RandomizationConfig {
            lin_vel_noise: 0.1,
            ang_vel_noise: 0.2,
            gravity_noise: 0.03,
            joint_pos_noise: 0.01,
            joint_vel_noise: 0.5,
            scan_z_noise: 0.02,
            drift_sigma: 0.03,
            push_interval_steps: 250,
            push_max_lin: 0.8,
            push_max_ang: 0.8,
            mass_range: (0.8, 1.3),
            friction_range: (0.5, 1.25),
        }
    }
}

impl RandomizationConfig {
    /// All randomization off: privileged and noisy observations coincide and
    /// episodes are undisturbed.
    pub fn none() -> Self {
        RandomizationConfig {
            lin_vel_noise: 0.0,
            ang_vel_noise: 0.0,
            gravity_noise: 0.0,
            joint_pos_noise: 0.0,
            joint_vel_noise: 0.0,
            scan_z_noise: 0.0,
            drift_sigma: 0.0,
            push_interval_steps: 0,
            push_max_lin: 0.0,
            push_max_ang: 0.0,
            mass_range: (1.0, 1.0),
            friction_range: (1.0, 1.0),
        }
    }

    pub fn validate(&self) -> crate::error::Result<()> {
        for (name, v) in [
            ("lin_vel_noise", self.lin_vel_noise),
            ("ang_vel_noise", self.ang_vel_noise),
            ("gravity_noise", self.gravity_noise),
            ("joint_pos_noise", self.joint_pos_noise),
            ("joint_vel_noise", self.joint_vel_noise),
            ("scan_z_noise", self.scan_z_noise),
            ("drift_sigma", self.drift_sigma),
            ("push_max_lin", self.push_max_lin),
            ("push_max_ang", self.push_max_ang),
        ] {
            if v < 0.0 {
                return Err(crate::error::Error::config(
                    format!("randomization.{name}"),
                    "must be nonnegative",
                ));
            }
        }
        if self.mass_range.0 > self.mass_range.1 || self.mass_range.0 <= 0.0 {
            return Err(crate::error::Error::config("randomization.mass_range", "invalid range"));
        }
        if self.friction_range.0 > self.friction_range.1 || self.friction_range.0 <= 0.0 {
            return Err(crate::error::Error::config(
                "randomization.friction_range",
                "invalid range",
            ));
        }
        Ok(())
    }
}

/// Proprioception vector plus map scan, tagged with its variant.
#[derive(Clone, Debug)]
pub struct ObservationBundle {
    /// Layout: base linear velocity (3), angular rates (3), gravity (3),
    /// joint positions (A), joint velocities (A), previous action (A),
    /// velocity command (3).
    pub proprio: Vec<f64>,
    pub scan: MapScan<f64>,
    pub privileged: bool,
}

/// Build an observation for the current state.
///
/// `privileged = true` returns exact values with a drift-free scan and draws
/// nothing from the RNG.
pub fn assemble_observation(
    state: &SimState,
    field: &HeightField,
    enc_cfg: &EncoderConfig,
    rand: &RandomizationConfig,
    privileged: bool,
    rng: &mut ChaCha8Rng,
) -> Result<ObservationBundle> {
    let a = state.q.len();
    let mut proprio = Vec::with_capacity(12 + 3 * a);
    let g = gravity_in_base(state.tilt);

    let push_noisy = |value: f64, half_width: f64, rng: &mut ChaCha8Rng, out: &mut Vec<f64>| {
        if privileged || half_width <= 0.0 {
            out.push(value);
        } else {
            out.push(value + rng.gen_range(-half_width..half_width));
        }
    };

    for v in state.base_lin_vel {
        push_noisy(v, rand.lin_vel_noise, rng, &mut proprio);
    }
    for v in state.base_ang_vel {
        push_noisy(v, rand.ang_vel_noise, rng, &mut proprio);
    }
    for v in g {
        push_noisy(v, rand.gravity_noise, rng, &mut proprio);
    }
    for &v in &state.q {
        push_noisy(v, rand.joint_pos_noise, rng, &mut proprio);
    }
    for &v in &state.qd {
        push_noisy(v, rand.joint_vel_noise, rng, &mut proprio);
    }
    // previous actions and velocity commands are never perturbed
    proprio.extend_from_slice(&state.prev_action);
    proprio.extend_from_slice(&state.command);

    let pose = BasePose {
        x: state.base_pos[0],
        y: state.base_pos[1],
        z: state.base_pos[2],
        yaw: state.yaw,
    };
    let drift = if privileged {
        (0.0, 0.0)
    } else {
        (state.map_drift[0], state.map_drift[1])
    };
    let mut scan: MapScan<f64> = sample_map_scan(field, pose, enc_cfg, drift)?;
    if !privileged && rand.scan_z_noise > 0.0 {
        let cfg = enc_cfg;
        let mut z = Vec::with_capacity(cfg.tokens());
        for p in scan.points().data().chunks(3) {
            z.push(p[2] + rng.gen_range(-rand.scan_z_noise..rand.scan_z_noise));
        }
        scan = MapScan::from_z_grid(cfg, &z)?;
    }

    Ok(ObservationBundle {
        proprio,
        scan,
        privileged,
    })
}

impl SimEnv {
    /// Observation for this environment's current state, drawing noise from
    /// the environment RNG stream.
    pub fn observe(
        &mut self,
        enc_cfg: &EncoderConfig,
        rand: &RandomizationConfig,
        privileged: bool,
    ) -> Result<ObservationBundle> {
        assemble_observation(&self.state, &self.field, enc_cfg, rand, privileged, &mut self.rng)
    }
}
