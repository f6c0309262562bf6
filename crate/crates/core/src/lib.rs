//! Deterministic multi-vehicle platoon-merging library.
//!
//! Vehicles scattered over several lanes first enlarge their longitudinal
//! spacing on their own lanes (pre-merge stage), then merge onto a desired
//! lane and form a platoon whose head-to-tail ordering is not configured
//! anywhere: it emerges from the balance between attraction to a virtual
//! target cruising on that lane and repulsion between neighbors. Both stages
//! solve one small structured program per vehicle per step, built from
//! barrier-style constraint rows and solved exactly by active-set
//! enumeration.
//!
//! Crate layout:
//!
//! * [`vehicle`] — bicycle kinematics, the virtual-point input conversion,
//!   fixed-step integration.
//! * [`neighbors`] — the sensing structures controllers consume.
//! * [`cbf`] — constraint error functions, their gradients, and the
//!   class-K shaping function.
//! * [`qp`] — the exact slack-QP solver and its independent oracle.
//! * [`controller`] — per-vehicle stage machine and program assembly.
//! * [`scenario`] — JSON scenario files and validation.
//! * [`sim`] — the synchronous simulation loop and trajectory logs.
//! * [`metrics`] — post-hoc verification of the merging objectives.
//! * [`selftest`] — randomized solver-vs-oracle equivalence harness.

pub mod cbf;
pub mod controller;
pub mod metrics;
pub mod neighbors;
pub mod qp;
pub mod scenario;
pub mod selftest;
pub mod sim;
pub mod vehicle;

pub use cbf::{GammaSpec, PhiEval};
pub use controller::{compute_control, ControlDecision, ControllerParams};
pub use metrics::{
    check_platoon_objectives, check_premerge_objectives, extract_ordering, ObjectiveReport,
    PlatoonTolerances,
};
pub use neighbors::{SensingParams, WorldSnapshot};
pub use qp::{solve_active_set, solve_oracle, ConstraintRow, QpSolution, SlackQp};
pub use scenario::{load_scenario, Scenario};
pub use selftest::{run_qp_selftest, SelftestConfig, SelftestReport};
pub use sim::{run, TrajectoryLog};
pub use vehicle::{Behavior, Stage, VehicleParams, VehicleState, VirtualTarget};
