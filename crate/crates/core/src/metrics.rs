//! Post-hoc verification of every merging objective over a trajectory log:
//! three pre-merge objectives (spacing regulation, lateral lane keeping,
//! same-lane separation) and four platoon objectives (lateral convergence,
//! stable ordering with bounded gaps, cruising at the target velocity,
//! collision avoidance). Reports are pure functions of the log.

use serde::Serialize;
use thiserror::Error;

use crate::controller::ControllerParams;
use crate::neighbors::{SensingParams, LANE_EPS};
use crate::sim::{StepRecord, TrajectoryLog, VehicleRecord};
use crate::vehicle::{Behavior, Stage};

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("record holds no normally behaving vehicle")]
    EmptyFleet,
}

/// One verified objective.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ObjectiveResult {
    pub name: &'static str,
    pub pass: bool,
    /// The measured extremum the verdict rests on.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub measured: Option<f64>,
    /// Settlement time, for objectives that record one.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub settle_time_s: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tolerance: Option<f64>,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ObjectiveReport {
    pub objectives: Vec<ObjectiveResult>,
    pub all_pass: bool,
}

impl ObjectiveReport {
    fn from_results(objectives: Vec<ObjectiveResult>) -> Self {
        let all_pass = objectives.iter().all(|o| o.pass);
        ObjectiveReport {
            objectives,
            all_pass,
        }
    }

    pub fn objective(&self, name: &str) -> Option<&ObjectiveResult> {
        self.objectives.iter().find(|o| o.name == name)
    }
}

/// Tolerances for the platoon objectives.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PlatoonTolerances {
    /// Allowed lateral deviation from the desired lane over the window.
    pub lateral: f64,
    /// Allowed deviation of finite-difference velocity from the cruise
    /// velocity over the window.
    pub velocity: f64,
    /// Required margin of adjacent gaps inside the open spacing interval.
    pub gap_margin: f64,
    /// Slack below the safe radius tolerated by the collision objective.
    pub safety: f64,
}

impl Default for PlatoonTolerances {
    fn default() -> Self {
        PlatoonTolerances {
            lateral: 0.05,
            velocity: 0.2,
            gap_margin: 0.0,
            safety: 1e-9,
        }
    }
}

fn is_normal(v: &VehicleRecord) -> bool {
    v.behavior == Behavior::Normal
}

/// Head-to-tail ordering of the normally behaving vehicles by descending
/// longitudinal position. Exact ties (possible only pre-merge) break by id.
pub fn extract_ordering(record: &StepRecord) -> Result<Vec<u32>, MetricsError> {
    let mut fleet: Vec<&VehicleRecord> = record.vehicles.iter().filter(|v| is_normal(v)).collect();
    if fleet.is_empty() {
        return Err(MetricsError::EmptyFleet);
    }
    fleet.sort_by(|a, b| {
        b.x_m
            .partial_cmp(&a.x_m)
            .expect("finite positions")
            .then(a.id.cmp(&b.id))
    });
    Ok(fleet.iter().map(|v| v.id).collect())
}

/// Minimum pairwise longitudinal gap among normal vehicles per record;
/// infinite when fewer than two normal vehicles exist.
pub fn min_gap_timeseries(log: &TrajectoryLog) -> Vec<(f64, f64)> {
    log.records
        .iter()
        .map(|record| {
            let xs: Vec<f64> = record
                .vehicles
                .iter()
                .filter(|v| is_normal(v))
                .map(|v| v.x_m)
                .collect();
            let mut min = f64::INFINITY;
            for (i, a) in xs.iter().enumerate() {
                for b in &xs[i + 1..] {
                    min = min.min((a - b).abs());
                }
            }
            (record.t_s, min)
        })
        .collect()
}

/// First times per vehicle: y at first appearance and the merge-switch time.
struct VehicleTimeline {
    id: u32,
    y0: f64,
    switch_time: Option<f64>,
}

fn timelines(log: &TrajectoryLog) -> Vec<VehicleTimeline> {
    let mut out: Vec<VehicleTimeline> = Vec::new();
    for record in &log.records {
        for v in &record.vehicles {
            match out.iter_mut().find(|t| t.id == v.id) {
                None => out.push(VehicleTimeline {
                    id: v.id,
                    y0: v.y_m,
                    switch_time: (v.stage == Stage::Merge).then_some(record.t_s),
                }),
                Some(timeline) => {
                    if timeline.switch_time.is_none() && v.stage == Stage::Merge {
                        timeline.switch_time = Some(record.t_s);
                    }
                }
            }
        }
    }
    out
}

/// Verifies the three pre-merge objectives.
///
/// * `spacing_regulation`: some record has every pair of normal vehicles at
///   least the switch gap apart (the settlement time is recorded).
/// * `lateral_lane_keeping`: every vehicle holds its initial lateral
///   position until its own stage switch, to 1e-9.
/// * `same_lane_separation`: pairs sharing their initial lane stay at least
///   the safe radius apart while both are pre-merge.
pub fn check_premerge_objectives(
    log: &TrajectoryLog,
    sensing: &SensingParams,
    gap_tol: f64,
) -> ObjectiveReport {
    let mut results = Vec::with_capacity(3);

    // Objective 1: simultaneous spacing clearance.
    let mut settle: Option<(f64, f64)> = None;
    for record in &log.records {
        let xs: Vec<f64> = record
            .vehicles
            .iter()
            .filter(|v| is_normal(v))
            .map(|v| v.x_m)
            .collect();
        let mut min_gap = f64::INFINITY;
        for (i, a) in xs.iter().enumerate() {
            for b in &xs[i + 1..] {
                min_gap = min_gap.min((a - b).abs());
            }
        }
        if min_gap >= sensing.switch_gap {
            settle = Some((record.t_s, min_gap));
            break;
        }
    }
    results.push(match settle {
        Some((t, gap)) => ObjectiveResult {
            name: "spacing_regulation",
            pass: true,
            measured: Some(gap),
            settle_time_s: Some(t),
            tolerance: Some(sensing.switch_gap),
            detail: format!("all pairwise gaps at least {} m at t = {t} s", sensing.switch_gap),
        },
        None => ObjectiveResult {
            name: "spacing_regulation",
            pass: false,
            measured: None,
            settle_time_s: None,
            tolerance: Some(sensing.switch_gap),
            detail: "no record with every pairwise gap above the switch gap".into(),
        },
    });

    // Objective 2: lateral hold until the stage switch.
    let lines = timelines(log);
    let hold_tol = 1e-9;
    let mut worst_hold: f64 = 0.0;
    let mut hold_ok = true;
    for record in &log.records {
        for v in &record.vehicles {
            let timeline = lines.iter().find(|t| t.id == v.id).expect("seen id");
            let pre_switch = match timeline.switch_time {
                Some(ts) => record.t_s < ts,
                None => true,
            };
            if pre_switch {
                let dev = (v.y_m - timeline.y0).abs();
                worst_hold = worst_hold.max(dev);
                if dev > hold_tol {
                    hold_ok = false;
                }
            }
        }
    }
    results.push(ObjectiveResult {
        name: "lateral_lane_keeping",
        pass: hold_ok,
        measured: Some(worst_hold),
        settle_time_s: None,
        tolerance: Some(hold_tol),
        detail: format!("worst pre-switch lateral drift {worst_hold} m"),
    });

    // Objective 3: same-initial-lane separation while both are pre-merge.
    let mut min_same_lane = f64::INFINITY;
    for record in &log.records {
        let fleet: Vec<&VehicleRecord> = record
            .vehicles
            .iter()
            .filter(|v| v.stage == Stage::PreMerge)
            .collect();
        for (i, a) in fleet.iter().enumerate() {
            for b in &fleet[i + 1..] {
                let (ya, yb) = (
                    lines.iter().find(|t| t.id == a.id).expect("seen").y0,
                    lines.iter().find(|t| t.id == b.id).expect("seen").y0,
                );
                if (ya - yb).abs() <= LANE_EPS {
                    min_same_lane = min_same_lane.min((a.x_m - b.x_m).abs());
                }
            }
        }
    }
    let threshold = sensing.safe_radius - gap_tol;
    results.push(ObjectiveResult {
        name: "same_lane_separation",
        pass: min_same_lane >= threshold,
        measured: Some(min_same_lane),
        settle_time_s: None,
        tolerance: Some(threshold),
        detail: if min_same_lane.is_finite() {
            format!("minimum same-lane pre-merge gap {min_same_lane} m")
        } else {
            "no same-lane pre-merge pair observed".into()
        },
    });

    ObjectiveReport::from_results(results)
}

/// Verifies the four platoon objectives over the trailing settle window
/// (collision avoidance runs over the whole log).
pub fn check_platoon_objectives(
    log: &TrajectoryLog,
    ctrl: &ControllerParams,
    settle_window_s: f64,
    tols: &PlatoonTolerances,
) -> ObjectiveReport {
    let mut results = Vec::with_capacity(4);
    let (r, rho) = (ctrl.sensing.safe_radius, ctrl.sensing.switch_gap);

    if log.records.is_empty() {
        for name in [
            "lateral_convergence",
            "ordering_flexible_platoon",
            "platoon_cruising",
            "collision_avoidance",
        ] {
            results.push(ObjectiveResult {
                name,
                pass: false,
                measured: None,
                settle_time_s: None,
                tolerance: None,
                detail: "empty log".into(),
            });
        }
        return ObjectiveReport::from_results(results);
    }

    let t_last = log.records.last().expect("non-empty").t_s;
    let window_start = t_last - settle_window_s;
    let window: Vec<&StepRecord> = log
        .records
        .iter()
        .filter(|record| record.t_s >= window_start - 1e-12)
        .collect();
    let y_d = log.records[0].target.y_m;

    // Objective 1: lateral convergence over the window.
    let mut worst_lateral: f64 = 0.0;
    for record in &window {
        for v in record.vehicles.iter().filter(|v| is_normal(v)) {
            worst_lateral = worst_lateral.max((v.y_m - y_d).abs());
        }
    }
    results.push(ObjectiveResult {
        name: "lateral_convergence",
        pass: worst_lateral <= tols.lateral,
        measured: Some(worst_lateral),
        settle_time_s: Some(window_start.max(0.0)),
        tolerance: Some(tols.lateral),
        detail: format!("worst lateral error {worst_lateral} m over the settle window"),
    });

    // Objective 2: constant ordering with adjacent gaps strictly inside
    // (r + margin, rho - margin).
    let mut ordering_pass = true;
    let mut detail = String::new();
    let mut min_margin = f64::INFINITY;
    let mut reference: Option<Vec<u32>> = None;
    for record in &window {
        match extract_ordering(record) {
            Err(_) => {
                ordering_pass = false;
                detail = "no normal vehicles in the window".into();
                break;
            }
            Ok(ordering) => {
                match &reference {
                    None => reference = Some(ordering.clone()),
                    Some(reference) if *reference != ordering => {
                        ordering_pass = false;
                        detail = format!(
                            "ordering changed within the window: {reference:?} -> {ordering:?} at t = {}",
                            record.t_s
                        );
                        break;
                    }
                    Some(_) => {}
                }
                let by_id = |id: u32| {
                    record
                        .vehicles
                        .iter()
                        .find(|v| v.id == id)
                        .expect("ordered id exists")
                };
                let ordering = reference.as_ref().expect("set above");
                for pair in ordering.windows(2) {
                    let gap = by_id(pair[0]).x_m - by_id(pair[1]).x_m;
                    min_margin = min_margin.min(gap - r).min(rho - gap);
                    if gap <= r + tols.gap_margin || gap >= rho - tols.gap_margin {
                        ordering_pass = false;
                        detail = format!(
                            "adjacent gap {gap} m between {} and {} outside ({}, {}) at t = {}",
                            pair[0],
                            pair[1],
                            r + tols.gap_margin,
                            rho - tols.gap_margin,
                            record.t_s
                        );
                    }
                }
            }
        }
        if !ordering_pass {
            break;
        }
    }
    if ordering_pass {
        detail = format!(
            "ordering {:?} constant, worst gap margin {min_margin} m",
            reference.unwrap_or_default()
        );
    }
    results.push(ObjectiveResult {
        name: "ordering_flexible_platoon",
        pass: ordering_pass,
        measured: if min_margin.is_finite() {
            Some(min_margin)
        } else {
            None
        },
        settle_time_s: Some(window_start.max(0.0)),
        tolerance: Some(tols.gap_margin),
        detail,
    });

    // Objective 3: cruising verified end-to-end by central differences of
    // the logged positions, not the logged velocities.
    let v_d = ctrl.cruise_velocity;
    let mut worst_speed_err: f64 = 0.0;
    let mut speed_samples = 0usize;
    for k in 1..window.len().saturating_sub(1) {
        let (prev, mid, next) = (&window[k - 1], &window[k], &window[k + 1]);
        let dt = next.t_s - prev.t_s;
        if dt <= 0.0 {
            continue;
        }
        for v in mid.vehicles.iter().filter(|v| is_normal(v)) {
            let find = |record: &StepRecord| {
                record
                    .vehicles
                    .iter()
                    .find(|other| other.id == v.id)
                    .map(|other| other.x_m)
            };
            if let (Some(before), Some(after)) = (find(prev), find(next)) {
                let speed = (after - before) / dt;
                worst_speed_err = worst_speed_err.max((speed - v_d).abs());
                speed_samples += 1;
            }
        }
    }
    results.push(ObjectiveResult {
        name: "platoon_cruising",
        pass: speed_samples > 0 && worst_speed_err <= tols.velocity,
        measured: Some(worst_speed_err),
        settle_time_s: Some(window_start.max(0.0)),
        tolerance: Some(tols.velocity),
        detail: if speed_samples == 0 {
            "window too short for finite-difference velocities".into()
        } else {
            format!("worst |dx/dt - v_d| = {worst_speed_err} m/s over {speed_samples} samples")
        },
    });

    // Objective 4: collision avoidance among merge-stage pairs, whole log.
    let mut min_merge_gap = f64::INFINITY;
    for record in &log.records {
        let merged: Vec<&VehicleRecord> = record
            .vehicles
            .iter()
            .filter(|v| is_normal(v) && v.stage == Stage::Merge)
            .collect();
        for (i, a) in merged.iter().enumerate() {
            for b in &merged[i + 1..] {
                min_merge_gap = min_merge_gap.min((a.x_m - b.x_m).abs());
            }
        }
    }
    results.push(ObjectiveResult {
        name: "collision_avoidance",
        pass: min_merge_gap >= r - tols.safety,
        measured: if min_merge_gap.is_finite() {
            Some(min_merge_gap)
        } else {
            None
        },
        settle_time_s: None,
        tolerance: Some(r - tols.safety),
        detail: if min_merge_gap.is_finite() {
            format!("minimum merge-stage pairwise gap {min_merge_gap} m over the whole run")
        } else {
            "fewer than two merge-stage vehicles ever coexisted".into()
        },
    });

    ObjectiveReport::from_results(results)
}
