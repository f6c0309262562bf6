//! Randomized equivalence harness for the solver: draws structured scalar
//! programs, solves each by active-set enumeration and by the independent
//! slack-eliminated oracle, and reports the worst disagreement together with
//! the worst KKT residuals. The CLI exposes it as a self-test command.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::qp::{
    kkt_report, solve_active_set, solve_oracle, ConstraintRow, QpError, SlackQp,
};

#[derive(Debug, Clone, Serialize)]
pub struct SelftestConfig {
    pub instances: usize,
    pub seed: u64,
    /// Rows per instance are drawn from `0..=max_rows`.
    pub max_rows: usize,
    /// Ternary-search tolerance handed to the oracle.
    pub oracle_tol: f64,
    /// Pass threshold on the worst `|u_activeset - u_oracle|`.
    pub max_u_deviation: f64,
    /// Pass threshold on the worst objective disagreement (relative).
    pub max_objective_deviation: f64,
}

impl Default for SelftestConfig {
    fn default() -> Self {
        Self {
            instances: 10_000,
            seed: 42,
            max_rows: 6,
            oracle_tol: 1e-8,
            max_u_deviation: 1e-6,
            max_objective_deviation: 1e-8,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SelftestReport {
    pub config: SelftestConfig,
    pub instances_run: usize,
    pub infeasible_instances: usize,
    /// Worst |u_activeset - u_oracle| over feasible instances.
    pub max_u_deviation: f64,
    /// Worst relative objective disagreement.
    pub max_objective_deviation: f64,
    /// Worst KKT residuals over all active-set solutions.
    pub worst_stationarity: f64,
    pub worst_primal: f64,
    pub worst_dual: f64,
    pub worst_complementarity: f64,
    /// Instances where one route solved and the other reported infeasible,
    /// or a KKT certificate failed. Always zero on a healthy build.
    pub failures: usize,
    pub pass: bool,
}

/// Draws one random program: up to `max_rows` rows, coefficients in
/// [-10, 10], slack weight in {1, 10, 100}, roughly one hard row in four.
pub fn random_instance(rng: &mut impl Rng, max_rows: usize) -> SlackQp {
    let weights = [1.0, 10.0, 100.0];
    let mut qp = SlackQp::new(
        rng.gen_range(-10.0..10.0),
        weights[rng.gen_range(0..weights.len())],
    );
    let rows = rng.gen_range(0..=max_rows);
    for _ in 0..rows {
        qp.push(ConstraintRow {
            grad: rng.gen_range(-10.0..10.0),
            error: rng.gen_range(-10.0..10.0),
            shift: rng.gen_range(-10.0..10.0),
            slacked: rng.gen_range(0..4) > 0,
        });
    }
    qp
}

pub fn run_qp_selftest(config: &SelftestConfig) -> SelftestReport {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut report = SelftestReport {
        config: config.clone(),
        instances_run: 0,
        infeasible_instances: 0,
        max_u_deviation: 0.0,
        max_objective_deviation: 0.0,
        worst_stationarity: 0.0,
        worst_primal: 0.0,
        worst_dual: 0.0,
        worst_complementarity: 0.0,
        failures: 0,
        pass: false,
    };

    for _ in 0..config.instances {
        let qp = random_instance(&mut rng, config.max_rows);
        report.instances_run += 1;
        match (solve_active_set(&qp), solve_oracle(&qp, config.oracle_tol)) {
            (Ok(exact), Ok(oracle)) => {
                let du = (exact.u - oracle.u).abs();
                let scale = 1.0f64.max(exact.objective.abs());
                let dobj = (exact.objective - oracle.objective).abs() / scale;
                report.max_u_deviation = report.max_u_deviation.max(du);
                report.max_objective_deviation = report.max_objective_deviation.max(dobj);

                let kkt = kkt_report(&qp, &exact);
                report.worst_stationarity = report.worst_stationarity.max(kkt.stationarity);
                report.worst_primal = report.worst_primal.max(kkt.primal);
                report.worst_dual = report.worst_dual.max(kkt.dual);
                report.worst_complementarity =
                    report.worst_complementarity.max(kkt.complementarity);
                if !kkt.within(1e-9, 1e-12, 1e-9) {
                    report.failures += 1;
                }
            }
            (
                Err(QpError::InfeasibleHard { .. }),
                Err(QpError::InfeasibleHard { .. }),
            ) => {
                report.infeasible_instances += 1;
            }
            _ => {
                report.failures += 1;
            }
        }
    }

    report.pass = report.failures == 0
        && report.max_u_deviation <= config.max_u_deviation
        && report.max_objective_deviation <= config.max_objective_deviation;
    report
}
