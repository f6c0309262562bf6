//! The synchronous simulation loop: freeze a snapshot, compute every
//! vehicle's control from it, convert to actuation, integrate, log. Events
//! fire at the first step boundary at or after their timestamp. Runs are
//! deterministic: the same scenario always produces byte-identical logs.

use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::controller::{compute_control, ControlDecision, ControllerError, ControllerParams};
use crate::neighbors::WorldSnapshot;
use crate::scenario::{
    check_initial_separation, validate_spec_against, Event, EventKind, Scenario, ScenarioError,
};
use crate::vehicle::{
    desired_to_actuation, integrate_target, integrate_vehicle, Behavior, Stage, VehicleError,
    VehicleParams,
};

/// Slack used when matching event timestamps to step boundaries.
const TIME_EPS: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Controller(#[from] ControllerError),
    #[error(transparent)]
    Vehicle(#[from] VehicleError),
}

/// Why a run stopped early.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AbortKind {
    /// A gap fell below the safe radius.
    Safety,
    /// Non-finite state or a solver capacity limit.
    Numeric,
    /// An event or scenario invariant failed mid-run.
    Assumption,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AbortRecord {
    pub t_s: f64,
    pub kind: AbortKind,
    pub message: String,
    /// Vehicles involved, when known (collision pairs carry both ids).
    #[serde(default)]
    pub vehicle_ids: Vec<u32>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TargetRecord {
    pub x_m: f64,
    pub y_m: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VehicleRecord {
    pub id: u32,
    pub x_m: f64,
    pub y_m: f64,
    pub theta_rad: f64,
    /// Body velocity commanded at this step.
    pub v_mps: f64,
    pub psi_rad: f64,
    pub stage: Stage,
    pub behavior: Behavior,
    /// Desired planar velocities computed at this step.
    pub ux_mps: f64,
    pub uy_mps: f64,
    pub fallback: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub t_s: f64,
    pub target: TargetRecord,
    pub vehicles: Vec<VehicleRecord>,
}

/// Complete output of one run. When a run aborts the records gathered so
/// far are kept and the abort is recorded alongside them.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrajectoryLog {
    pub records: Vec<StepRecord>,
    pub abort: Option<AbortRecord>,
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum LogLine {
    Step(StepRecord),
    Abort { abort: AbortRecord },
}

impl TrajectoryLog {
    pub fn write_jsonl(&self, mut out: impl Write) -> std::io::Result<()> {
        for record in &self.records {
            serde_json::to_writer(&mut out, record)?;
            out.write_all(b"\n")?;
        }
        if let Some(abort) = &self.abort {
            serde_json::to_writer(&mut out, &serde_json::json!({ "abort": abort }))?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn to_jsonl(&self) -> String {
        let mut buffer = Vec::new();
        self.write_jsonl(&mut buffer).expect("in-memory write");
        String::from_utf8(buffer).expect("json is utf-8")
    }

    pub fn from_jsonl(text: &str) -> Result<Self, serde_json::Error> {
        let mut log = TrajectoryLog::default();
        for line in text.lines() {
            if line.trim().is_empty() {
                continue;
            }
            match serde_json::from_str::<LogLine>(line)? {
                LogLine::Step(record) => log.records.push(record),
                LogLine::Abort { abort } => log.abort = Some(abort),
            }
        }
        Ok(log)
    }

    /// Wide per-vehicle CSV export.
    pub fn write_csv(&self, mut out: impl Write) -> std::io::Result<()> {
        writeln!(out, "t,id,x,y,theta,v,psi,stage,behavior,ux,uy,fallback")?;
        for record in &self.records {
            for v in &record.vehicles {
                writeln!(
                    out,
                    "{},{},{},{},{},{},{},{},{},{},{},{}",
                    record.t_s,
                    v.id,
                    v.x_m,
                    v.y_m,
                    v.theta_rad,
                    v.v_mps,
                    v.psi_rad,
                    stage_name(v.stage),
                    behavior_name(v.behavior),
                    v.ux_mps,
                    v.uy_mps,
                    v.fallback
                )?;
            }
        }
        Ok(())
    }
}

fn stage_name(stage: Stage) -> &'static str {
    match stage {
        Stage::PreMerge => "pre_merge",
        Stage::Merge => "merge",
    }
}

fn behavior_name(behavior: Behavior) -> &'static str {
    match behavior {
        Behavior::Normal => "normal",
        Behavior::Broken => "broken",
        Behavior::NonMerging => "non_merging",
    }
}

/// Mutable world advanced by the engine.
#[derive(Debug, Clone)]
pub struct World {
    pub snap: WorldSnapshot,
    pub params: Vec<VehicleParams>,
}

impl World {
    pub fn from_scenario(scenario: &Scenario) -> Self {
        let (snap, params) = scenario.initial_world();
        World { snap, params }
    }
}

/// Number of integration steps covering `[0, t_end]`, tolerant of the usual
/// floating-point drift in `t_end / dt`.
pub fn step_count(t_end: f64, dt: f64) -> usize {
    let ratio = t_end / dt;
    let n = if (ratio - ratio.round()).abs() <= 1e-9 * ratio.abs().max(1.0) {
        ratio.round()
    } else {
        ratio.ceil()
    };
    n.max(0.0) as usize
}

/// Applies one event to the world. Appearing vehicles are re-validated
/// against the current world before insertion.
pub fn apply_event(
    world: &mut World,
    event: &Event,
    scenario: &Scenario,
) -> Result<(), ScenarioError> {
    match &event.kind {
        EventKind::Breakdown { id } => {
            let v = find_vehicle(world, *id)?;
            v.behavior = Behavior::Broken;
            v.v = 0.0;
        }
        EventKind::SetBehavior { id, behavior } => {
            find_vehicle(world, *id)?.behavior = *behavior;
        }
        EventKind::Appear { vehicle } => {
            let safe_radius = scenario.sensing().safe_radius;
            validate_spec_against(vehicle, &scenario.lanes_y_m, safe_radius)?;
            if world.snap.vehicles.iter().any(|v| v.id == vehicle.id) {
                return Err(ScenarioError::Invalid(format!(
                    "appearing vehicle reuses id {}",
                    vehicle.id
                )));
            }
            let existing = world
                .snap
                .vehicles
                .iter()
                .map(|v| (v.id, v.x, v.y))
                .chain(std::iter::once((vehicle.id, vehicle.x_m, vehicle.y_m)));
            check_initial_separation(existing.collect::<Vec<_>>().into_iter(), safe_radius)?;

            let lane0 = scenario
                .lane_index(vehicle.y_m)
                .expect("validated lane membership");
            let mut state = crate::vehicle::VehicleState {
                id: vehicle.id,
                x: vehicle.x_m,
                y: vehicle.y_m,
                theta: vehicle.theta_rad,
                v: vehicle.v_mps,
                psi: vehicle.psi_rad,
                lane0,
                stage: Stage::PreMerge,
                behavior: vehicle.behavior,
            };
            if state.behavior == Behavior::Broken {
                state.v = 0.0;
            }
            world.snap.vehicles.push(state);
            world.params.push(vehicle.params());
        }
    }
    Ok(())
}

fn find_vehicle(
    world: &mut World,
    id: u32,
) -> Result<&mut crate::vehicle::VehicleState, ScenarioError> {
    world
        .snap
        .vehicles
        .iter_mut()
        .find(|v| v.id == id)
        .ok_or(ScenarioError::Invalid(format!(
            "event references unknown vehicle id {id}"
        )))
}

/// Per-vehicle outcome of one control step.
#[derive(Debug, Clone)]
pub struct StepControls {
    pub decisions: Vec<ControlDecision>,
    /// Actuation pairs `(v, psi)` implied by the decisions.
    pub actuations: Vec<(f64, f64)>,
}

/// Computes every vehicle's control from a frozen snapshot, commits the
/// stage switches, and converts to actuation. Returns the abort that ends
/// the run, if any.
pub fn compute_step_controls(
    world: &mut World,
    p: &ControllerParams,
) -> Result<StepControls, AbortRecord> {
    let snap = world.snap.clone();
    let t = snap.time;
    let mut decisions = Vec::with_capacity(snap.vehicles.len());
    for vehicle in &snap.vehicles {
        match compute_control(vehicle.id, &snap, p) {
            Ok(d) => decisions.push(d),
            Err(ControllerError::Collision { i, j, gap }) => {
                return Err(AbortRecord {
                    t_s: t,
                    kind: AbortKind::Safety,
                    message: format!("gap {gap} between vehicles {i} and {j} below safe radius"),
                    vehicle_ids: vec![i, j],
                });
            }
            Err(ControllerError::Coincident { i, j, x }) => {
                return Err(AbortRecord {
                    t_s: t,
                    kind: AbortKind::Assumption,
                    message: format!("vehicles {i} and {j} coincide at x = {x}"),
                    vehicle_ids: vec![i, j],
                });
            }
            Err(e) => {
                return Err(AbortRecord {
                    t_s: t,
                    kind: AbortKind::Numeric,
                    message: e.to_string(),
                    vehicle_ids: vec![vehicle.id],
                });
            }
        }
    }

    let mut actuations = Vec::with_capacity(decisions.len());
    for ((state, params), decision) in world
        .snap
        .vehicles
        .iter_mut()
        .zip(&world.params)
        .zip(&decisions)
    {
        state.stage = decision.stage;
        if !decision.desired.ux.is_finite() || !decision.desired.uy.is_finite() {
            return Err(AbortRecord {
                t_s: t,
                kind: AbortKind::Numeric,
                message: format!("non-finite desired velocity for vehicle {}", state.id),
                vehicle_ids: vec![state.id],
            });
        }
        let actuation = match desired_to_actuation(&decision.desired, state.theta, params) {
            Ok(pair) => pair,
            // Zero command: hold position, keep the previous steering angle.
            Err(VehicleError::DegenerateInput) => (0.0, state.psi),
            Err(e) => {
                return Err(AbortRecord {
                    t_s: t,
                    kind: AbortKind::Numeric,
                    message: e.to_string(),
                    vehicle_ids: vec![state.id],
                });
            }
        };
        actuations.push(actuation);
    }
    Ok(StepControls {
        decisions,
        actuations,
    })
}

/// Advances every vehicle and the target by one step.
pub fn integrate_step(
    world: &mut World,
    controls: &StepControls,
    dt: f64,
) -> Result<(), AbortRecord> {
    let t = world.snap.time;
    for (index, state) in world.snap.vehicles.iter_mut().enumerate() {
        let (v, psi) = controls.actuations[index];
        match integrate_vehicle(state, &world.params[index], v, psi, dt) {
            Ok(next) => *state = next,
            Err(e) => {
                return Err(AbortRecord {
                    t_s: t,
                    kind: AbortKind::Numeric,
                    message: e.to_string(),
                    vehicle_ids: vec![state.id],
                });
            }
        }
    }
    world.snap.target = integrate_target(&world.snap.target, dt);
    world.snap.time = t + dt;
    Ok(())
}

fn make_record(world: &World, controls: &StepControls) -> StepRecord {
    StepRecord {
        t_s: world.snap.time,
        target: TargetRecord {
            x_m: world.snap.target.x,
            y_m: world.snap.target.y,
        },
        vehicles: world
            .snap
            .vehicles
            .iter()
            .enumerate()
            .map(|(i, v)| VehicleRecord {
                id: v.id,
                x_m: v.x,
                y_m: v.y,
                theta_rad: v.theta,
                v_mps: controls.actuations[i].0,
                psi_rad: controls.actuations[i].1,
                stage: v.stage,
                behavior: v.behavior,
                ux_mps: controls.decisions[i].desired.ux,
                uy_mps: controls.decisions[i].desired.uy,
                fallback: controls.decisions[i].fallback,
            })
            .collect(),
    }
}

/// Runs a validated scenario to completion or abort. Timestamps are exactly
/// `k * dt`; each record carries the state at `t` together with the controls
/// computed from it.
pub fn run(scenario: &Scenario) -> TrajectoryLog {
    let p = scenario.controller_params();
    let mut world = World::from_scenario(scenario);
    let mut log = TrajectoryLog::default();

    let steps = step_count(scenario.t_end_s, scenario.dt_s);
    let mut events: Vec<&Event> = scenario.events.iter().collect();
    events.sort_by(|a, b| a.time_s.partial_cmp(&b.time_s).expect("finite event times"));
    let mut next_event = 0;

    for k in 0..=steps {
        let t = k as f64 * scenario.dt_s;
        world.snap.time = t;
        while next_event < events.len() && events[next_event].time_s <= t + TIME_EPS {
            if let Err(e) = apply_event(&mut world, events[next_event], scenario) {
                log.abort = Some(AbortRecord {
                    t_s: t,
                    kind: AbortKind::Assumption,
                    message: e.to_string(),
                    vehicle_ids: Vec::new(),
                });
                return log;
            }
            next_event += 1;
        }

        let controls = match compute_step_controls(&mut world, &p) {
            Ok(c) => c,
            Err(abort) => {
                log.abort = Some(abort);
                return log;
            }
        };
        log.records.push(make_record(&world, &controls));

        if k < steps {
            if let Err(abort) = integrate_step(&mut world, &controls, scenario.dt_s) {
                log.abort = Some(abort);
                return log;
            }
        }
    }
    log
}

/// Process exit code for a finished run: 0 on success, 2 on assumption
/// violations, 3 on safety aborts, 4 on numeric aborts.
pub fn exit_code(log: &TrajectoryLog) -> i32 {
    match &log.abort {
        None => 0,
        Some(abort) => match abort.kind {
            AbortKind::Assumption => 2,
            AbortKind::Safety => 3,
            AbortKind::Numeric => 4,
        },
    }
}
