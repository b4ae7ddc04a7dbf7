//! Tool-tip motion: blocking straight-line moves at constant speed and the
//! per-fruit approach waypoints.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{min_of, Aabb, Vec3, TOOL_ORIENTATION_RPY};
use crate::localization::StrawberryBox;

/// Clearance below the lowest observed fruit.
pub const Z_MIN_CLEARANCE: f64 = 0.010;
/// Added to the box's far x limit before lateral alignment.
pub const X_SAFETY_OFFSET: f64 = 0.010;
/// Added to the box's top before trapping.
pub const Z_SAFETY_OFFSET: f64 = 0.015;

#[derive(Debug, Clone, PartialEq)]
pub struct RobotState {
    pub tool_pos: Vec3,
    /// Fraction of `max_speed`, in (0, 1].
    pub velocity_scale: f64,
    /// Meters per second.
    pub max_speed: f64,
    pub workspace: Aabb,
}

impl RobotState {
    pub fn new(tool_pos: Vec3, velocity_scale: f64, max_speed: f64, workspace: Aabb) -> Result<Self> {
        if !(velocity_scale > 0.0 && velocity_scale <= 1.0) {
            return Err(Error::config("velocity_scale", "must be in (0, 1]"));
        }
        if !(max_speed > 0.0) {
            return Err(Error::config("max_speed", "must be > 0"));
        }
        Ok(RobotState {
            tool_pos,
            velocity_scale,
            max_speed,
            workspace,
        })
    }

    /// The tool frame is never rotated relative to the base.
    pub fn orientation(&self) -> [f64; 3] {
        TOOL_ORIENTATION_RPY
    }

    pub fn speed(&self) -> f64 {
        self.velocity_scale * self.max_speed
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MoveRecord {
    pub from: Vec3,
    pub to: Vec3,
    pub duration: f64,
    pub t_start: f64,
    pub t_end: f64,
}

/// Blocking move to `target`; returns the new state and the record. The
/// caller's clock advances to `record.t_end`.
pub fn robot_move(state: &RobotState, target: Vec3, clock: f64) -> Result<(RobotState, MoveRecord)> {
    if !state.workspace.contains(&target) {
        return Err(Error::MotionRejected(target));
    }
    let from = state.tool_pos;
    let duration = (target - from).norm() / state.speed();
    let next = RobotState {
        tool_pos: target,
        ..state.clone()
    };
    Ok((
        next,
        MoveRecord {
            from,
            to: target,
            duration,
            t_start: clock,
            t_end: clock + duration,
        },
    ))
}

/// Lowest box bottom minus the clearance.
pub fn compute_z_min(boxes: &[StrawberryBox]) -> Result<f64> {
    if boxes.is_empty() {
        return Err(Error::EmptyInput("compute_z_min on empty box list"));
    }
    let bottoms: Vec<f64> = boxes.iter().map(|b| b.bounds.min.z).collect();
    Ok(min_of(&bottoms)? - Z_MIN_CLEARANCE)
}

/// The three approach targets for one fruit, starting from `current`:
/// drop to `z_min`, align under the fruit, then rise around it.
pub fn plan_cycle_waypoints(current: Vec3, b: &StrawberryBox, z_min: f64) -> [Vec3; 3] {
    let w1 = Vec3::new(current.x, current.y, z_min);
    let w2 = Vec3::new(
        b.bounds.max.x + X_SAFETY_OFFSET,
        (b.bounds.min.y + b.bounds.max.y) / 2.0,
        w1.z,
    );
    let w3 = Vec3::new(w2.x, w2.y, b.bounds.max.z + Z_SAFETY_OFFSET);
    [w1, w2, w3]
}

/// Robot settings as they appear in scenario configs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RobotParams {
    pub home: [f64; 3],
    pub velocity_scale: f64,
    pub max_speed: f64,
    /// Margin added around the crop window to form the reachable workspace.
    pub workspace_margin: f64,
}

impl Default for RobotParams {
    fn default() -> Self {
        RobotParams {
            home: [0.15, 0.0, 0.26],
            velocity_scale: 0.5,
            max_speed: 1.0,
            workspace_margin: 0.10,
        }
    }
}

impl RobotParams {
    pub fn home(&self) -> Vec3 {
        Vec3::new(self.home[0], self.home[1], self.home[2])
    }

    pub fn to_meters(&mut self, per_meter: f64) {
        for v in self.home.iter_mut() {
            *v /= per_meter;
        }
        self.max_speed /= per_meter;
        self.workspace_margin /= per_meter;
    }

    /// Initial state parked at HOME.
    pub fn state(&self, crop_window: &Aabb) -> Result<RobotState> {
        if !(self.workspace_margin >= 0.0) {
            return Err(Error::config("workspace_margin", "must be >= 0"));
        }
        RobotState::new(
            self.home(),
            self.velocity_scale,
            self.max_speed,
            crop_window.inflate(self.workspace_margin),
        )
    }
}
