//! Neighbor structures consumed by the two controller stages: the nearest
//! vehicle ahead, the same-lane sensing set, and the longitudinal sensing
//! set. All queries are read-only over an immutable world snapshot.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::vehicle::{Behavior, Stage, VehicleState, VirtualTarget};

/// Two lateral positions closer than this count as the same lane.
pub const LANE_EPS: f64 = 1e-6;

#[derive(Debug, Error, PartialEq)]
pub enum NeighborError {
    #[error("unknown vehicle id {0}")]
    UnknownId(u32),
}

/// Immutable view of the world at one control instant.
///
/// The vehicle list order is fixed for a run so that every per-step
/// computation is deterministic.
#[derive(Debug, Clone, PartialEq)]
pub struct WorldSnapshot {
    /// Simulation time, seconds.
    pub time: f64,
    pub vehicles: Vec<VehicleState>,
    pub target: VirtualTarget,
}

impl WorldSnapshot {
    pub fn vehicle(&self, id: u32) -> Result<&VehicleState, NeighborError> {
        self.vehicles
            .iter()
            .find(|v| v.id == id)
            .ok_or(NeighborError::UnknownId(id))
    }
}

/// Sensing geometry shared by every vehicle.
///
/// Invariant, checked at scenario load: `0 < base_length < safe_radius <
/// switch_gap < sensing_radius`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SensingParams {
    /// Sensing radius R, meters.
    pub sensing_radius: f64,
    /// Safe radius r, meters; gaps below it count as collisions.
    pub safe_radius: f64,
    /// Stage-switch and platoon spacing bound rho, meters, in (r, R).
    pub switch_gap: f64,
}

/// The nearest vehicle strictly ahead within the sensing radius, if any.
/// Ties are broken by the smallest id.
pub fn pre_sensing_neighbor(
    id: u32,
    snap: &WorldSnapshot,
    p: &SensingParams,
) -> Result<Option<u32>, NeighborError> {
    let me = snap.vehicle(id)?;
    let mut best: Option<(f64, u32)> = None;
    for other in &snap.vehicles {
        if other.id == id {
            continue;
        }
        let ahead = other.x - me.x;
        if ahead > 0.0 && ahead <= p.sensing_radius {
            let better = match best {
                None => true,
                Some((d, tie_id)) => ahead < d || (ahead == d && other.id < tie_id),
            };
            if better {
                best = Some((ahead, other.id));
            }
        }
    }
    Ok(best.map(|(_, id)| id))
}

/// Vehicles on the same lane within the sensing radius, ordered by id.
pub fn same_lane_neighbors(
    id: u32,
    snap: &WorldSnapshot,
    p: &SensingParams,
) -> Result<Vec<u32>, NeighborError> {
    let me = snap.vehicle(id)?;
    let mut out: Vec<u32> = snap
        .vehicles
        .iter()
        .filter(|other| {
            other.id != id
                && (me.x - other.x).abs() <= p.sensing_radius
                && (me.y - other.y).abs() <= LANE_EPS
        })
        .map(|other| other.id)
        .collect();
    out.sort_unstable();
    Ok(out)
}

/// Vehicles within the sensing radius longitudinally, regardless of lane,
/// ordered by id. Non-merging vehicles are excluded once the querying
/// vehicle is in the merge stage: they ignore the merging traffic, so the
/// merging controller drops its avoidance rows against them.
pub fn sensing_neighbors(
    id: u32,
    snap: &WorldSnapshot,
    p: &SensingParams,
) -> Result<Vec<u32>, NeighborError> {
    let me = snap.vehicle(id)?;
    let exclude_non_merging = me.stage == Stage::Merge;
    let mut out: Vec<u32> = snap
        .vehicles
        .iter()
        .filter(|other| {
            other.id != id
                && (me.x - other.x).abs() <= p.sensing_radius
                && !(exclude_non_merging && other.behavior == Behavior::NonMerging)
        })
        .map(|other| other.id)
        .collect();
    out.sort_unstable();
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vehicle::Stage;
    use proptest::prelude::*;

    fn vehicle(id: u32, x: f64, y: f64) -> VehicleState {
        VehicleState {
            id,
            x,
            y,
            theta: 0.0,
            v: 0.0,
            psi: 0.0,
            lane0: 0,
            stage: Stage::PreMerge,
            behavior: Behavior::Normal,
        }
    }

    fn snapshot(vehicles: Vec<VehicleState>) -> WorldSnapshot {
        WorldSnapshot {
            time: 0.0,
            vehicles,
            target: VirtualTarget {
                x: 0.0,
                y: 0.0,
                v: 0.0,
            },
        }
    }

    fn sensing(radius: f64) -> SensingParams {
        SensingParams {
            sensing_radius: radius,
            safe_radius: 0.6 * radius,
            switch_gap: 0.8 * radius,
        }
    }

    #[test]
    fn pre_sensing_picks_nearest_ahead() {
        let snap = snapshot(vec![
            vehicle(1, 0.0, 0.0),
            vehicle(2, 3.0, 1.0),
            vehicle(3, 10.0, 0.0),
        ]);
        assert_eq!(pre_sensing_neighbor(1, &snap, &sensing(5.0)), Ok(Some(2)));
    }

    #[test]
    fn pre_sensing_empty_when_nobody_ahead() {
        let snap = snapshot(vec![
            vehicle(1, 0.0, 0.0),
            vehicle(2, 3.0, 1.0),
            vehicle(3, 10.0, 0.0),
        ]);
        assert_eq!(pre_sensing_neighbor(3, &snap, &sensing(5.0)), Ok(None));
    }

    #[test]
    fn pre_sensing_ties_break_by_smallest_id() {
        let snap = snapshot(vec![
            vehicle(1, 0.0, 0.0),
            vehicle(3, 3.0, 1.0),
            vehicle(2, 3.0, 2.0),
        ]);
        assert_eq!(pre_sensing_neighbor(1, &snap, &sensing(5.0)), Ok(Some(2)));
    }

    #[test]
    fn pre_sensing_unknown_id() {
        let snap = snapshot(vec![vehicle(1, 0.0, 0.0)]);
        assert_eq!(
            pre_sensing_neighbor(9, &snap, &sensing(5.0)),
            Err(NeighborError::UnknownId(9))
        );
    }

    #[test]
    fn same_lane_within_radius() {
        let snap = snapshot(vec![vehicle(1, 0.0, 2.0), vehicle(2, 4.0, 2.0)]);
        assert_eq!(same_lane_neighbors(1, &snap, &sensing(5.0)), Ok(vec![2]));
    }

    #[test]
    fn different_lanes_excluded() {
        let snap = snapshot(vec![vehicle(1, 0.0, 0.0), vehicle(2, 1.0, 3.5)]);
        assert_eq!(same_lane_neighbors(1, &snap, &sensing(5.0)), Ok(vec![]));
    }

    #[test]
    fn same_lane_respects_radius() {
        let snap = snapshot(vec![
            vehicle(1, 0.0, 0.0),
            vehicle(2, 4.0, 0.0),
            vehicle(3, 20.0, 0.0),
        ]);
        assert_eq!(same_lane_neighbors(1, &snap, &sensing(5.0)), Ok(vec![2]));
    }

    #[test]
    fn sensing_any_lane_within_radius() {
        let snap = snapshot(vec![
            vehicle(1, 0.0, 0.0),
            vehicle(2, 4.9, 7.0),
            vehicle(3, 5.1, 0.0),
        ]);
        assert_eq!(sensing_neighbors(1, &snap, &sensing(5.0)), Ok(vec![2]));
    }

    #[test]
    fn sensing_singleton_world_is_empty() {
        let snap = snapshot(vec![vehicle(1, 0.0, 0.0)]);
        assert_eq!(sensing_neighbors(1, &snap, &sensing(5.0)), Ok(vec![]));
    }

    #[test]
    fn sensing_excludes_non_merging_for_merging_querier() {
        let mut me = vehicle(1, 0.0, 0.0);
        me.stage = Stage::Merge;
        let mut cruiser = vehicle(2, 3.0, 0.0);
        cruiser.behavior = Behavior::NonMerging;
        let snap = snapshot(vec![me, cruiser]);
        assert_eq!(sensing_neighbors(1, &snap, &sensing(5.0)), Ok(vec![]));

        // A pre-merge querier still sees the non-merging vehicle.
        let mut me = vehicle(1, 0.0, 0.0);
        me.stage = Stage::PreMerge;
        let mut cruiser = vehicle(2, 3.0, 0.0);
        cruiser.behavior = Behavior::NonMerging;
        let snap = snapshot(vec![me, cruiser]);
        assert_eq!(sensing_neighbors(1, &snap, &sensing(5.0)), Ok(vec![2]));
    }

    #[test]
    fn broken_vehicles_stay_visible() {
        let mut wreck = vehicle(2, 3.0, 0.0);
        wreck.behavior = Behavior::Broken;
        let snap = snapshot(vec![vehicle(1, 0.0, 0.0), wreck]);
        assert_eq!(sensing_neighbors(1, &snap, &sensing(5.0)), Ok(vec![2]));
        assert_eq!(same_lane_neighbors(1, &snap, &sensing(5.0)), Ok(vec![2]));
        assert_eq!(pre_sensing_neighbor(1, &snap, &sensing(5.0)), Ok(Some(2)));
    }

    proptest! {
        /// Sensing-set membership is symmetric among normal vehicles.
        #[test]
        fn sensing_is_symmetric(xs in proptest::collection::vec(-50.0f64..50.0, 2..8)) {
            let vehicles: Vec<_> = xs
                .iter()
                .enumerate()
                .map(|(i, &x)| vehicle(i as u32 + 1, x, f64::from(i as u32 % 3) * 3.5))
                .collect();
            let snap = snapshot(vehicles.clone());
            let p = sensing(5.0);
            for a in &vehicles {
                for b in &vehicles {
                    if a.id == b.id {
                        continue;
                    }
                    let a_sees_b = sensing_neighbors(a.id, &snap, &p).unwrap().contains(&b.id);
                    let b_sees_a = sensing_neighbors(b.id, &snap, &p).unwrap().contains(&a.id);
                    prop_assert_eq!(a_sees_b, b_sees_a);
                }
            }
        }

        /// All three structures are invariant under a uniform shift of every
        /// longitudinal position.
        #[test]
        fn translation_invariance(
            xs in proptest::collection::vec(-50.0f64..50.0, 2..8),
            shift in -1000.0f64..1000.0,
        ) {
            let build = |offset: f64| {
                snapshot(
                    xs.iter()
                        .enumerate()
                        .map(|(i, &x)| vehicle(i as u32 + 1, x + offset, f64::from(i as u32 % 2) * 3.5))
                        .collect(),
                )
            };
            let base = build(0.0);
            let moved = build(shift);
            let p = sensing(5.0);
            for i in 1..=xs.len() as u32 {
                prop_assert_eq!(
                    pre_sensing_neighbor(i, &base, &p).unwrap(),
                    pre_sensing_neighbor(i, &moved, &p).unwrap()
                );
                prop_assert_eq!(
                    same_lane_neighbors(i, &base, &p).unwrap(),
                    same_lane_neighbors(i, &moved, &p).unwrap()
                );
                prop_assert_eq!(
                    sensing_neighbors(i, &base, &p).unwrap(),
                    sensing_neighbors(i, &moved, &p).unwrap()
                );
            }
        }
    }
}
