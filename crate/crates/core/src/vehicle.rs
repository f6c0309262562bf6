//! Bicycle-model kinematics and the virtual-point input conversion.
//!
//! Vehicles follow rear-axle bicycle kinematics. Control is computed for a
//! virtual point a small distance `d` ahead of the axle center; through that
//! point the planar desired velocities `(ux, uy)` map one-to-one onto the
//! actuator pair `(v, psi)` whenever the body velocity is nonzero.

use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use thiserror::Error;

/// Controller stage of one vehicle. The switch from `PreMerge` to `Merge`
/// latches: once a vehicle starts merging it never reverts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    PreMerge,
    Merge,
}

/// Behavior flag of one vehicle.
///
/// `Broken` vehicles hold `v = 0` forever; `NonMerging` vehicles cruise at
/// constant velocity on their own lane and never run the merging controller.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Behavior {
    Normal,
    Broken,
    NonMerging,
}

#[derive(Debug, Error, PartialEq)]
pub enum VehicleError {
    /// Both desired velocity components are zero; the caller must hold
    /// `v = 0` and keep the previous steering angle.
    #[error("desired velocity is zero in both axes")]
    DegenerateInput,
    #[error("non-finite {0} after integration")]
    NonFinite(&'static str),
    #[error("invalid vehicle parameters: {0}")]
    InvalidParams(String),
}

/// Static geometry of one vehicle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VehicleParams {
    /// Wheel base in meters.
    pub base_length: f64,
    /// Longitudinal offset of the controlled virtual point, meters.
    pub virtual_offset: f64,
    /// Optional symmetric steering clamp in radians, disabled by default.
    pub steer_limit: Option<f64>,
}

impl VehicleParams {
    /// Parameters with the virtual-point offset defaulting to a tenth of the
    /// wheel base.
    pub fn new(base_length: f64) -> Self {
        Self {
            base_length,
            virtual_offset: 0.1 * base_length,
            steer_limit: None,
        }
    }

    pub fn validate(&self) -> Result<(), VehicleError> {
        if !(self.base_length > 0.0) {
            return Err(VehicleError::InvalidParams(format!(
                "base_length must be positive, got {}",
                self.base_length
            )));
        }
        if !(self.virtual_offset > 0.0) {
            return Err(VehicleError::InvalidParams(format!(
                "virtual_offset must be positive, got {}",
                self.virtual_offset
            )));
        }
        if let Some(limit) = self.steer_limit {
            if !(limit > 0.0 && limit < PI / 2.0) {
                return Err(VehicleError::InvalidParams(format!(
                    "steer_limit must lie in (0, pi/2), got {limit}"
                )));
            }
        }
        Ok(())
    }
}

/// Pose, actuation, and control bookkeeping of one vehicle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VehicleState {
    pub id: u32,
    /// Longitudinal position, meters.
    pub x: f64,
    /// Lateral position, meters.
    pub y: f64,
    /// Yaw angle, wrapped into [-pi, pi).
    pub theta: f64,
    /// Body velocity, m/s.
    pub v: f64,
    /// Steering angle, radians.
    pub psi: f64,
    /// Index of the lane the vehicle occupied at t = 0.
    pub lane0: usize,
    pub stage: Stage,
    pub behavior: Behavior,
}

/// The fictitious lead point cruising on the desired lane.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VirtualTarget {
    /// Longitudinal position, meters; strictly increasing when `v > 0`.
    pub x: f64,
    /// Lateral position, meters; constant over a run.
    pub y: f64,
    /// Cruise velocity, m/s (non-negative).
    pub v: f64,
}

/// Desired planar velocities for the virtual point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DesiredVelocity {
    pub ux: f64,
    pub uy: f64,
}

/// Wraps an angle into [-pi, pi). In-range angles pass through untouched so
/// repeated wrapping never perturbs them.
pub fn wrap_angle(theta: f64) -> f64 {
    if (-PI..PI).contains(&theta) {
        theta
    } else {
        (theta + PI).rem_euclid(2.0 * PI) - PI
    }
}

/// The controlled point `p + d*R(theta)*e1`, i.e. `(x + d cos(theta),
/// y + d sin(theta))`.
pub fn virtual_point(state: &VehicleState, params: &VehicleParams) -> (f64, f64) {
    (
        state.x + params.virtual_offset * state.theta.cos(),
        state.y + params.virtual_offset * state.theta.sin(),
    )
}

/// Converts desired planar velocities into the actuator pair `(v, psi)`.
///
/// Returns [`VehicleError::DegenerateInput`] when both components are zero;
/// the caller holds `v = 0` and keeps the previous steering angle.
pub fn desired_to_actuation(
    u: &DesiredVelocity,
    theta: f64,
    params: &VehicleParams,
) -> Result<(f64, f64), VehicleError> {
    if u.ux == 0.0 && u.uy == 0.0 {
        return Err(VehicleError::DegenerateInput);
    }
    let v = u.ux * theta.cos() + u.uy * theta.sin();
    let steer_rate = (-u.ux * theta.sin() + u.uy * theta.cos()) * params.base_length
        / params.virtual_offset;
    let mut psi = steer_rate.atan2(v);
    if let Some(limit) = params.steer_limit {
        psi = psi.clamp(-limit, limit);
    }
    Ok((v, psi))
}

/// One explicit-Euler step of the bicycle kinematics; stores the applied
/// actuation and wraps the yaw angle.
pub fn integrate_vehicle(
    state: &VehicleState,
    params: &VehicleParams,
    v: f64,
    psi: f64,
    dt: f64,
) -> Result<VehicleState, VehicleError> {
    debug_assert!(dt > 0.0);
    let mut next = *state;
    next.x = state.x + v * state.theta.cos() * dt;
    next.y = state.y + v * state.theta.sin() * dt;
    next.theta = wrap_angle(state.theta + v * psi.tan() / params.base_length * dt);
    next.v = v;
    next.psi = psi;
    if !next.x.is_finite() {
        return Err(VehicleError::NonFinite("x"));
    }
    if !next.y.is_finite() {
        return Err(VehicleError::NonFinite("y"));
    }
    if !next.theta.is_finite() {
        return Err(VehicleError::NonFinite("theta"));
    }
    Ok(next)
}

/// Advances the virtual target: `x += v*dt`, `y` unchanged.
pub fn integrate_target(target: &VirtualTarget, dt: f64) -> VirtualTarget {
    VirtualTarget {
        x: target.x + target.v * dt,
        ..*target
    }
}
