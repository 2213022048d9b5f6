//! Reward system: one term per table row, weighted per robot.
//!
//! The total is exactly the sum of the reported weighted terms. Hinge
//! penalties activate outside 0.9 of the position/velocity limits and 0.8 of
//! the torque limits; the contact-force penalty activates above 700 N. The
//! standing penalties exist only in stage 2 and evaluate to zero unless the
//! command norm marks the robot as standing.

use super::{gravity_in_base, RobotModel, SimState, StepInfo};
use crate::terrain::RobotProfile;
use serde::{Deserialize, Serialize};

/// Static description of one reward table row.
#[derive(Clone, Copy, Debug)]
pub struct RewardRow {
    pub name: &'static str,
    pub quadruped_weight: Option<f64>,
    pub biped_weight: Option<f64>,
    pub stage2_only: bool,
}

const ROWS: &[RewardRow] = &[
    RewardRow { name: "lin_vel_tracking", quadruped_weight: Some(5.0), biped_weight: Some(5.0), stage2_only: false },
    RewardRow { name: "ang_vel_tracking", quadruped_weight: Some(3.0), biped_weight: Some(3.0), stage2_only: false },
    RewardRow { name: "termination", quadruped_weight: Some(200.0), biped_weight: Some(200.0), stage2_only: false },
    RewardRow { name: "collision", quadruped_weight: Some(1.0), biped_weight: None, stage2_only: false },
    RewardRow { name: "action_rate", quadruped_weight: Some(5.0e-3), biped_weight: Some(5.0e-3), stage2_only: false },
    RewardRow { name: "joint_acceleration", quadruped_weight: Some(2.5e-7), biped_weight: Some(1.0e-6), stage2_only: false },
    RewardRow { name: "joint_torques", quadruped_weight: Some(2.0e-5), biped_weight: Some(5.0e-5), stage2_only: false },
    RewardRow { name: "joint_position_limits", quadruped_weight: Some(1.0), biped_weight: Some(10.0), stage2_only: false },
    RewardRow { name: "joint_velocity_limits", quadruped_weight: Some(1.0), biped_weight: Some(0.1), stage2_only: false },
    RewardRow { name: "joint_torque_limits", quadruped_weight: Some(0.2), biped_weight: Some(2.0e-3), stage2_only: false },
    RewardRow { name: "lin_vel_penalty", quadruped_weight: Some(1.0), biped_weight: None, stage2_only: false },
    RewardRow { name: "ang_vel_penalty", quadruped_weight: Some(5.0e-2), biped_weight: Some(5.0e-2), stage2_only: false },
    RewardRow { name: "contact_forces", quadruped_weight: Some(2.5e-5), biped_weight: None, stage2_only: false },
    RewardRow { name: "foot_slippage", quadruped_weight: Some(0.5), biped_weight: Some(1.0), stage2_only: false },
    RewardRow { name: "joint_deviation", quadruped_weight: None, biped_weight: Some(0.5), stage2_only: false },
    RewardRow { name: "no_fly", quadruped_weight: None, biped_weight: Some(5.0), stage2_only: false },
    RewardRow { name: "straight_body", quadruped_weight: None, biped_weight: Some(3.0), stage2_only: false },
    RewardRow { name: "standing_joint_position", quadruped_weight: Some(0.1), biped_weight: None, stage2_only: true },
    RewardRow { name: "standing_joint_velocity", quadruped_weight: Some(0.5), biped_weight: Some(0.2), stage2_only: true },
];

/// Contact-force threshold in newtons.
const CONTACT_FORCE_LIMIT: f64 = 700.0;

/// All reward rows, in reporting order.
pub fn reward_rows() -> &'static [RewardRow] {
    ROWS
}

impl RewardRow {
    pub fn weight_for(&self, profile: RobotProfile) -> Option<f64> {
        match profile {
            RobotProfile::Quadruped => self.quadruped_weight,
            RobotProfile::Biped => self.biped_weight,
        }
    }
}

/// Per-robot weights, overridable by name from the run configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RewardWeights {
    pub profile: RobotProfile,
    /// (row name, weight) for every row active on this robot.
    pub weights: Vec<(String, f64)>,
}

impl RewardWeights {
    pub fn defaults(profile: RobotProfile) -> Self {
        RewardWeights {
            profile,
            weights: ROWS
                .iter()
                .filter_map(|r| r.weight_for(profile).map(|w| (r.name.to_string(), w)))
                .collect(),
        }
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.weights.iter().find(|(n, _)| n == name).map(|(_, w)| *w)
    }

    pub fn set(&mut self, name: &str, weight: f64) -> crate::error::Result<()> {
        match self.weights.iter_mut().find(|(n, _)| n == name) {
            Some(slot) => {
                slot.1 = weight;
                Ok(())
            }
            None => Err(crate::error::Error::config(
                format!("reward.{name}"),
                "unknown reward term for this robot",
            )),
        }
    }

    /// Keep only the velocity-tracking terms (used by the tracking-only
    /// smoke configuration).
    pub fn tracking_only(profile: RobotProfile) -> Self {
        let mut w = RewardWeights::defaults(profile);
        for (name, weight) in &mut w.weights {
            if name != "lin_vel_tracking" && name != "ang_vel_tracking" {
                *weight = 0.0;
            }
        }
        w
    }
}

/// Weighted per-term contributions; `total` is their exact sum.
#[derive(Clone, Debug, PartialEq)]
pub struct RewardBreakdown {
    pub terms: Vec<(&'static str, f64)>,
    pub total: f64,
}

impl RewardBreakdown {
    pub fn term(&self, name: &str) -> Option<f64> {
        self.terms.iter().find(|(n, _)| *n == name).map(|(_, v)| *v)
    }
}

/// Evaluate every active reward row for one transition.
pub fn compute_reward(
    prev: &SimState,
    curr: &SimState,
    action: &[f64],
    info: &StepInfo,
    model: &RobotModel,
    weights: &RewardWeights,
    stage: u8,
) -> RewardBreakdown {
    let profile = model.profile;
    let mut terms = Vec::with_capacity(ROWS.len());
    let mut total = 0.0;
    for row in ROWS {
        let Some(default_w) = row.weight_for(profile) else {
            continue;
        };
        if row.stage2_only && stage < 2 {
            continue;
        }
        let w = weights.get(row.name).unwrap_or(default_w);
        let raw = raw_term(row.name, prev, curr, action, info, model);
        let contribution = w * raw;
        total += contribution;
        terms.push((row.name, contribution));
    }
    RewardBreakdown { terms, total }
}

fn raw_term(
    name: &str,
    prev: &SimState,
    curr: &SimState,
    action: &[f64],
    info: &StepInfo,
    model: &RobotModel,
) -> f64 {
    match name {
        "lin_vel_tracking" => {
            let ex = curr.command[0] - curr.base_lin_vel[0];
            let ey = curr.command[1] - curr.base_lin_vel[1];
            (-(ex * ex + ey * ey)).exp()
        }
        "ang_vel_tracking" => {
            let e = curr.command[2] - curr.base_ang_vel[2];
            (-(e * e)).exp()
        }
        "termination" => -f64::from(info.terminated),
        "collision" => -f64::from(info.collisions),
        "action_rate" => {
            -action
                .iter()
                .zip(prev.prev_action.iter())
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
        }
        "joint_acceleration" => -curr.qdd.iter().map(|v| v * v).sum::<f64>(),
        "joint_torques" => -curr.tau.iter().map(|v| v * v).sum::<f64>(),
        "joint_position_limits" => {
            -curr
                .q
                .iter()
                .zip(model.joint_limit.iter())
                .map(|(q, lim)| (q.abs() - 0.9 * lim).max(0.0))
                .sum::<f64>()
        }
        "joint_velocity_limits" => {
            -curr
                .qd
                .iter()
                .zip(model.vel_limit.iter())
                .map(|(v, lim)| (v.abs() - 0.9 * lim).max(0.0))
                .sum::<f64>()
        }
        "joint_torque_limits" => {
            -curr
                .tau
                .iter()
                .zip(model.torque_limit.iter())
                .map(|(t, lim)| (t.abs() - 0.8 * lim).max(0.0))
                .sum::<f64>()
        }
        "lin_vel_penalty" => -curr.base_lin_vel[2] * curr.base_lin_vel[2],
        "ang_vel_penalty" => {
            -(curr.base_ang_vel[0] * curr.base_ang_vel[0]
                + curr.base_ang_vel[1] * curr.base_ang_vel[1])
        }
        "contact_forces" => {
            -curr
                .feet_force
                .iter()
                .map(|f| (f - CONTACT_FORCE_LIMIT).max(0.0))
                .sum::<f64>()
        }
        "foot_slippage" => {
            -(0..model.foot_count)
                .map(|f| {
                    if curr.feet_contact[f] {
                        let v = curr.feet_vel[f];
                        (v[0] * v[0] + v[1] * v[1]).sqrt()
                    } else {
                        0.0
                    }
                })
                .sum::<f64>()
        }
        "joint_deviation" => {
            let dev: f64 = model
                .deviation_joints
                .clone()
                .map(|j| {
                    let d = curr.q[j] - model.default_joint_pos[j];
                    d * d
                })
                .sum();
            -(dev - 0.25).max(0.0)
        }
        "no_fly" => -f64::from(info.zero_contact),
        "straight_body" => {
            let g = gravity_in_base(curr.tilt);
            -(g[0] * g[0] + g[1] * g[1])
        }
        "standing_joint_position" => {
            if curr.standing {
                -curr
                    .q
                    .iter()
                    .zip(model.default_joint_pos.iter())
                    .map(|(q, q0)| (q - q0) * (q - q0))
                    .sum::<f64>()
                    .sqrt()
            } else {
                0.0
            }
        }
        "standing_joint_velocity" => {
            if curr.standing {
                -curr.qd.iter().map(|v| v * v).sum::<f64>().sqrt()
            } else {
                0.0
            }
        }
        other => unreachable!("unknown reward term {other}"),
    }
}
