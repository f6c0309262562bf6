//! Scenario files: a single JSON document with explicit units in the field
//! names, validated against the initial-condition assumptions before a run
//! may start. Timed events inject breakdowns, newly appearing vehicles, and
//! behavior flips.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::controller::ControllerParams;
use crate::neighbors::{SensingParams, WorldSnapshot, LANE_EPS};
use crate::vehicle::{Behavior, Stage, VehicleParams, VehicleState, VirtualTarget};

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read scenario: {0}")]
    Io(#[from] std::io::Error),
    #[error("cannot parse scenario: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("{name} violated by vehicles {ids:?}: {detail}")]
    AssumptionViolation {
        name: &'static str,
        ids: Vec<u32>,
        detail: String,
    },
    #[error("invalid scenario: {0}")]
    Invalid(String),
}

fn violation(name: &'static str, ids: Vec<u32>, detail: String) -> ScenarioError {
    ScenarioError::AssumptionViolation { name, ids, detail }
}

/// Initial state and geometry of one vehicle as written in a scenario file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VehicleSpec {
    pub id: u32,
    pub x_m: f64,
    pub y_m: f64,
    #[serde(default)]
    pub v_mps: f64,
    /// Initial yaw; must be zero (vehicles start aligned with their lanes).
    #[serde(default)]
    pub theta_rad: f64,
    /// Initial steering; must be zero.
    #[serde(default)]
    pub psi_rad: f64,
    pub base_length_m: f64,
    /// Defaults to a tenth of the base length.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub virtual_offset_m: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub steer_limit_rad: Option<f64>,
    #[serde(default = "default_behavior")]
    pub behavior: Behavior,
}

fn default_behavior() -> Behavior {
    Behavior::Normal
}

impl VehicleSpec {
    pub fn params(&self) -> VehicleParams {
        VehicleParams {
            base_length: self.base_length_m,
            virtual_offset: self
                .virtual_offset_m
                .unwrap_or(0.1 * self.base_length_m),
            steer_limit: self.steer_limit_rad,
        }
    }

    fn state(&self, lane0: usize) -> VehicleState {
        VehicleState {
            id: self.id,
            x: self.x_m,
            y: self.y_m,
            theta: self.theta_rad,
            v: self.v_mps,
            psi: self.psi_rad,
            lane0,
            stage: Stage::PreMerge,
            behavior: self.behavior,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TargetSpec {
    pub x_m: f64,
    pub y_m: f64,
    pub v_mps: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControllerSpec {
    pub sensing_radius_m: f64,
    pub safe_radius_m: f64,
    /// Defaults to the midpoint of the safe and sensing radii.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub switch_gap_m: Option<f64>,
    pub slack_weight: f64,
    #[serde(default = "default_gamma")]
    pub gamma: crate::cbf::GammaSpec,
}

fn default_gamma() -> crate::cbf::GammaSpec {
    crate::cbf::GammaSpec::Identity
}

/// One timed intervention.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Event {
    pub time_s: f64,
    #[serde(flatten)]
    pub kind: EventKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    /// The vehicle stops instantly and stays stopped.
    Breakdown { id: u32 },
    /// A new vehicle enters the world; it is validated against the current
    /// world state and starts in the pre-merge stage.
    Appear { vehicle: VehicleSpec },
    /// Flips the behavior flag of an existing vehicle.
    SetBehavior { id: u32, behavior: Behavior },
}

/// A fully described simulation run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    /// Lateral coordinates of the lanes, meters.
    pub lanes_y_m: Vec<f64>,
    /// The lane every vehicle merges onto; must be one of `lanes_y_m`.
    pub desired_lane_y_m: f64,
    pub dt_s: f64,
    pub t_end_s: f64,
    /// Reserved; runs are deterministic regardless.
    #[serde(default)]
    pub seed: u64,
    pub target0: TargetSpec,
    pub controller: ControllerSpec,
    pub vehicles: Vec<VehicleSpec>,
    #[serde(default)]
    pub events: Vec<Event>,
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Self, ScenarioError> {
        let scenario: Scenario = serde_json::from_str(text)?;
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }

    pub fn sensing(&self) -> SensingParams {
        SensingParams {
            sensing_radius: self.controller.sensing_radius_m,
            safe_radius: self.controller.safe_radius_m,
            switch_gap: self.controller.switch_gap_m.unwrap_or(
                0.5 * (self.controller.safe_radius_m + self.controller.sensing_radius_m),
            ),
        }
    }

    pub fn controller_params(&self) -> ControllerParams {
        ControllerParams {
            sensing: self.sensing(),
            slack_weight: self.controller.slack_weight,
            gamma: self.controller.gamma,
            cruise_velocity: self.target0.v_mps,
        }
    }

    pub fn target(&self) -> VirtualTarget {
        VirtualTarget {
            x: self.target0.x_m,
            y: self.target0.y_m,
            v: self.target0.v_mps,
        }
    }

    /// Index of the lane at lateral position `y`, if any.
    pub fn lane_index(&self, y: f64) -> Option<usize> {
        self.lanes_y_m
            .iter()
            .position(|&lane| (lane - y).abs() <= LANE_EPS)
    }

    /// Full validation with a named diagnostic per violated assumption.
    pub fn validate(&self) -> Result<(), ScenarioError> {
        if !(self.dt_s > 0.0) {
            return Err(ScenarioError::Invalid(format!(
                "dt must be positive, got {}",
                self.dt_s
            )));
        }
        if !(self.t_end_s >= 0.0) {
            return Err(ScenarioError::Invalid(format!(
                "t_end must be non-negative, got {}",
                self.t_end_s
            )));
        }
        if self.lanes_y_m.is_empty() {
            return Err(ScenarioError::Invalid("no lanes given".into()));
        }
        if self.lane_index(self.desired_lane_y_m).is_none() {
            return Err(ScenarioError::Invalid(format!(
                "desired lane y = {} is not one of the lanes",
                self.desired_lane_y_m
            )));
        }
        if (self.target0.y_m - self.desired_lane_y_m).abs() > LANE_EPS {
            return Err(ScenarioError::Invalid(format!(
                "target lateral position {} is off the desired lane {}",
                self.target0.y_m, self.desired_lane_y_m
            )));
        }
        if !(self.target0.v_mps >= 0.0) {
            return Err(ScenarioError::Invalid(format!(
                "target velocity must be non-negative, got {}",
                self.target0.v_mps
            )));
        }
        if !(self.controller.slack_weight > 0.0) {
            return Err(ScenarioError::Invalid(format!(
                "slack weight must be positive, got {}",
                self.controller.slack_weight
            )));
        }
        self.controller
            .gamma
            .validate()
            .map_err(ScenarioError::Invalid)?;

        let sensing = self.sensing();
        let (r, rho, big_r) = (
            sensing.safe_radius,
            sensing.switch_gap,
            sensing.sensing_radius,
        );
        if !(r > 0.0 && r < rho && rho < big_r) {
            return Err(ScenarioError::Invalid(format!(
                "radii must satisfy 0 < safe ({r}) < switch ({rho}) < sensing ({big_r})"
            )));
        }

        let mut ids = std::collections::BTreeSet::new();
        for spec in &self.vehicles {
            if !ids.insert(spec.id) {
                return Err(ScenarioError::Invalid(format!(
                    "duplicate vehicle id {}",
                    spec.id
                )));
            }
            validate_spec_against(spec, &self.lanes_y_m, r)?;
        }
        check_initial_separation(
            self.vehicles.iter().map(|s| (s.id, s.x_m, s.y_m)),
            r,
        )?;

        for event in &self.events {
            if event.time_s < 0.0 || event.time_s > self.t_end_s {
                return Err(ScenarioError::Invalid(format!(
                    "event at t = {} outside [0, {}]",
                    event.time_s, self.t_end_s
                )));
            }
        }
        Ok(())
    }

    /// The validated initial world.
    pub fn initial_world(&self) -> (WorldSnapshot, Vec<VehicleParams>) {
        let vehicles = self
            .vehicles
            .iter()
            .map(|spec| {
                let lane0 = self.lane_index(spec.y_m).expect("validated lane");
                spec.state(lane0)
            })
            .collect();
        let params = self.vehicles.iter().map(VehicleSpec::params).collect();
        (
            WorldSnapshot {
                time: 0.0,
                vehicles,
                target: self.target(),
            },
            params,
        )
    }
}

/// Checks one vehicle spec in isolation: valid geometry, zero initial yaw
/// and steering, on some lane, base length below the safe radius.
pub(crate) fn validate_spec_against(
    spec: &VehicleSpec,
    lanes: &[f64],
    safe_radius: f64,
) -> Result<(), ScenarioError> {
    spec.params()
        .validate()
        .map_err(|e| ScenarioError::Invalid(format!("vehicle {}: {e}", spec.id)))?;
    if spec.theta_rad != 0.0 || spec.psi_rad != 0.0 {
        return Err(violation(
            "Assumption2",
            vec![spec.id],
            format!(
                "initial yaw and steering must be zero, got theta = {}, psi = {}",
                spec.theta_rad, spec.psi_rad
            ),
        ));
    }
    if !lanes.iter().any(|&lane| (lane - spec.y_m).abs() <= LANE_EPS) {
        return Err(ScenarioError::Invalid(format!(
            "vehicle {} starts off-lane at y = {}",
            spec.id, spec.y_m
        )));
    }
    if !(spec.base_length_m < safe_radius) {
        return Err(ScenarioError::Invalid(format!(
            "vehicle {}: base length {} must be below the safe radius {}",
            spec.id, spec.base_length_m, safe_radius
        )));
    }
    Ok(())
}

/// Pairwise initial-separation checks: same-lane gaps at least the safe
/// radius, different-lane longitudinal positions distinct.
pub(crate) fn check_initial_separation(
    vehicles: impl Iterator<Item = (u32, f64, f64)> + Clone,
    safe_radius: f64,
) -> Result<(), ScenarioError> {
    let all: Vec<_> = vehicles.collect();
    for (i, &(id_a, x_a, y_a)) in all.iter().enumerate() {
        for &(id_b, x_b, y_b) in &all[i + 1..] {
            let same_lane = (y_a - y_b).abs() <= LANE_EPS;
            let gap = (x_a - x_b).abs();
            if same_lane && gap < safe_radius {
                return Err(violation(
                    "Assumption4",
                    vec![id_a, id_b],
                    format!("same-lane gap {gap} below the safe radius {safe_radius}"),
                ));
            }
            if !same_lane && gap == 0.0 {
                return Err(violation(
                    "Assumption3",
                    vec![id_a, id_b],
                    "different-lane vehicles overlap longitudinally".into(),
                ));
            }
        }
    }
    Ok(())
}

pub fn load_scenario(path: impl AsRef<Path>) -> Result<Scenario, ScenarioError> {
    let text = std::fs::read_to_string(path)?;
    Scenario::from_json(&text)
}
