//! Per-vehicle control: assembles the pre-merge and merge-stage programs
//! from constraint rows, manages the latching stage switch, and handles the
//! broken and non-merging behaviors.
//!
//! Everything here is a pure function of an immutable snapshot, so all
//! vehicles' controls for one step may be computed concurrently and merged
//! before integration; results do not depend on evaluation order.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cbf::{
    phi_lateral, phi_long_regulation, phi_neighbor_ca, phi_same_lane, phi_target, CbfError,
    GammaSpec,
};
use crate::neighbors::{
    pre_sensing_neighbor, same_lane_neighbors, sensing_neighbors, NeighborError, SensingParams,
    WorldSnapshot,
};
use crate::qp::{solve_active_set, ConstraintRow, QpError, SlackQp};
use crate::vehicle::{Behavior, DesiredVelocity, Stage};

#[derive(Debug, Error, PartialEq)]
pub enum ControllerError {
    #[error(transparent)]
    Neighbor(#[from] NeighborError),
    /// Two vehicles are within the safe radius; the run must abort.
    #[error("vehicles {i} and {j} collided: gap {gap} below safe radius")]
    Collision { i: u32, j: u32, gap: f64 },
    /// Coincident longitudinal positions make the same-lane row undefined.
    #[error("vehicles {i} and {j} share longitudinal position {x}")]
    Coincident { i: u32, j: u32, x: f64 },
    #[error("solver rejected the program: {0}")]
    Solver(QpError),
}

/// Parameters shared by every merging vehicle's controller.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControllerParams {
    pub sensing: SensingParams,
    /// Slack penalty weight in both stages' objectives.
    pub slack_weight: f64,
    pub gamma: GammaSpec,
    /// Cruise velocity of the virtual target, added to every pre-merge
    /// longitudinal command so spacing regulation never reverses the fleet.
    pub cruise_velocity: f64,
}

/// Output of one per-vehicle control computation.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlDecision {
    pub desired: DesiredVelocity,
    /// Stage after this step's latching switch check.
    pub stage: Stage,
    /// Active rows of the longitudinal program, for diagnostics.
    pub active_rows: Vec<usize>,
    /// Set when the hard rows conflicted and the least-worst-violation
    /// fallback was applied.
    pub fallback: bool,
}

impl ControlDecision {
    fn cruise(v: f64, stage: Stage) -> Self {
        Self {
            desired: DesiredVelocity { ux: v, uy: 0.0 },
            stage,
            active_rows: Vec::new(),
            fallback: false,
        }
    }
}

/// Latching stage switch: a pre-merge vehicle starts merging once every
/// other vehicle is at least the switch gap away longitudinally.
pub fn update_stage(
    id: u32,
    snap: &WorldSnapshot,
    p: &ControllerParams,
) -> Result<Stage, ControllerError> {
    let me = snap.vehicle(id)?;
    if me.stage == Stage::Merge {
        return Ok(Stage::Merge);
    }
    let cleared = snap
        .vehicles
        .iter()
        .filter(|other| other.id != id)
        .all(|other| (me.x - other.x).abs() >= p.sensing.switch_gap);
    Ok(if cleared { Stage::Merge } else { Stage::PreMerge })
}

/// Pre-merge spacing regulation: one slacked row toward the vehicle ahead,
/// one hard separation row per same-lane neighbor, lateral command zero.
pub fn stage1_control(
    id: u32,
    snap: &WorldSnapshot,
    p: &ControllerParams,
) -> Result<ControlDecision, ControllerError> {
    let me = snap.vehicle(id)?;
    let mut qp = SlackQp::new(0.0, p.slack_weight);

    if let Some(ahead_id) = pre_sensing_neighbor(id, snap, &p.sensing)? {
        let ahead = snap.vehicle(ahead_id)?;
        let phi = phi_long_regulation(me.x, ahead.x, p.sensing.sensing_radius);
        qp.push(ConstraintRow::slacked(
            phi.grad,
            p.gamma.eval(phi.value),
            0.0,
        ));
    }
    for other_id in same_lane_neighbors(id, snap, &p.sensing)? {
        let other = snap.vehicle(other_id)?;
        let phi = phi_same_lane(me.x, other.x, p.sensing.safe_radius).map_err(|e| match e {
            CbfError::Coincident(x) => ControllerError::Coincident {
                i: id,
                j: other_id,
                x,
            },
            CbfError::Unsafe { gap, .. } => ControllerError::Collision {
                i: id,
                j: other_id,
                gap,
            },
        })?;
        qp.push(ConstraintRow::hard(phi.grad, p.gamma.eval(phi.value), 0.0));
    }

    let (u, active_rows, fallback) = match solve_active_set(&qp) {
        Ok(sol) => (sol.u, sol.active_set, false),
        Err(QpError::InfeasibleHard { lower, upper }) => {
            // Deterministic least-worst-violation fallback; the geometry
            // violated the feasibility premise, so log and keep going.
            let mid = if lower.is_finite() && upper.is_finite() {
                0.5 * (lower + upper)
            } else {
                0.0
            };
            log::warn!(
                "vehicle {id}: conflicting hard separation rows ({lower}, {upper}); \
                 applying midpoint fallback {mid}"
            );
            (mid, Vec::new(), true)
        }
        Err(e) => return Err(ControllerError::Solver(e)),
    };

    Ok(ControlDecision {
        desired: DesiredVelocity {
            ux: u + p.cruise_velocity,
            uy: 0.0,
        },
        stage: Stage::PreMerge,
        active_rows,
        fallback,
    })
}

/// Merge-stage control: two decoupled programs. Lateral pulls onto the
/// desired lane through a single slacked row; longitudinal balances target
/// attraction against one repulsion row per sensed neighbor, all shifted by
/// the cruise velocity.
pub fn stage2_control(
    id: u32,
    snap: &WorldSnapshot,
    p: &ControllerParams,
) -> Result<ControlDecision, ControllerError> {
    let me = snap.vehicle(id)?;
    let v_d = p.cruise_velocity;

    let mut lateral = SlackQp::new(0.0, p.slack_weight);
    let phi_c = phi_lateral(me.y, snap.target.y);
    lateral.push(ConstraintRow::slacked(
        phi_c.grad,
        p.gamma.eval(phi_c.value),
        0.0,
    ));
    let uy = solve_active_set(&lateral)
        .map_err(ControllerError::Solver)?
        .u;

    let mut longitudinal = SlackQp::new(v_d, p.slack_weight);
    let phi_m = phi_target(me.x, snap.target.x);
    longitudinal.push(ConstraintRow::slacked(
        phi_m.grad,
        p.gamma.eval(phi_m.value),
        v_d,
    ));
    for other_id in sensing_neighbors(id, snap, &p.sensing)? {
        let other = snap.vehicle(other_id)?;
        let phi =
            phi_neighbor_ca(me.x, other.x, p.sensing.safe_radius, p.sensing.switch_gap)
                .map_err(|e| match e {
                    CbfError::Unsafe { gap, .. } => ControllerError::Collision {
                        i: id,
                        j: other_id,
                        gap,
                    },
                    CbfError::Coincident(x) => ControllerError::Coincident {
                        i: id,
                        j: other_id,
                        x,
                    },
                })?;
        longitudinal.push(ConstraintRow::slacked(
            phi.grad,
            p.gamma.eval(phi.value),
            v_d,
        ));
    }
    let sol = solve_active_set(&longitudinal).map_err(ControllerError::Solver)?;

    Ok(ControlDecision {
        desired: DesiredVelocity { ux: sol.u, uy },
        stage: Stage::Merge,
        active_rows: sol.active_set,
        fallback: false,
    })
}

/// Behavior dispatch for one vehicle: broken vehicles stand still,
/// non-merging vehicles hold their current velocity on their own lane,
/// everyone else runs the stage machine.
pub fn compute_control(
    id: u32,
    snap: &WorldSnapshot,
    p: &ControllerParams,
) -> Result<ControlDecision, ControllerError> {
    let me = snap.vehicle(id)?;
    match me.behavior {
        Behavior::Broken => Ok(ControlDecision::cruise(0.0, me.stage)),
        Behavior::NonMerging => Ok(ControlDecision::cruise(me.v, me.stage)),
        Behavior::Normal => match update_stage(id, snap, p)? {
            Stage::PreMerge => stage1_control(id, snap, p),
            Stage::Merge => stage2_control(id, snap, p),
        },
    }
}

/// Marker for tests and diagnostics: collision errors distinguish a safety
/// abort from other controller failures.
pub fn is_collision(err: &ControllerError) -> bool {
    matches!(err, ControllerError::Collision { .. })
}
