//! Exact solver for the structured scalar program shared by both controller
//! stages:
//!
//! ```text
//!     minimize    (u - center)^2 + c * sum_k delta_k^2
//!     subject to  grad_k * (u - shift_k) + error_k <= delta_k   (slacked rows)
//!                 grad_k * (u - shift_k) + error_k <= 0         (hard rows)
//! ```
//!
//! One decision variable, one optional slack per row, strictly convex
//! diagonal objective. [`solve_active_set`] enumerates candidate active sets
//! and solves each stationarity system exactly; [`solve_oracle`] eliminates
//! the slacks analytically and minimizes the resulting one-dimensional convex
//! function by ternary search. The two routes are independent and are held to
//! agreement by the test suite.

use itertools::Itertools;
use thiserror::Error;

use crate::cbf::{GammaSpec, PhiEval};

/// Enumeration bound on the number of constraint rows.
pub const MAX_ROWS: usize = 24;

/// Primal feasibility tolerance for accepting a candidate active set.
pub const FEAS_TOL: f64 = 1e-9;

/// Dual feasibility tolerance (multipliers may round slightly negative).
pub const DUAL_TOL: f64 = 1e-12;

#[derive(Debug, Error, PartialEq)]
pub enum QpError {
    /// The hard rows admit no common point. Only hard rows can conflict;
    /// slacked rows are always satisfiable.
    #[error("hard constraints conflict: need u >= {lower} and u <= {upper}")]
    InfeasibleHard { lower: f64, upper: f64 },
    #[error("{rows} rows exceed the active-set enumeration bound {MAX_ROWS}")]
    EnumerationLimit { rows: usize },
}

/// One constraint row.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConstraintRow {
    /// Gradient coefficient multiplying `(u - shift)`.
    pub grad: f64,
    /// Shaped task error, the gamma-mapped constraint level.
    pub error: f64,
    /// Velocity shift of the row (the target cruise speed for merge-stage
    /// longitudinal rows, zero otherwise).
    pub shift: f64,
    /// Whether the row carries its own quadratically penalized slack.
    pub slacked: bool,
}

impl ConstraintRow {
    pub fn slacked(grad: f64, error: f64, shift: f64) -> Self {
        Self {
            grad,
            error,
            shift,
            slacked: true,
        }
    }

    pub fn hard(grad: f64, error: f64, shift: f64) -> Self {
        Self {
            grad,
            error,
            shift,
            slacked: false,
        }
    }

    /// Constraint value `grad*(u - shift) + error` before slack.
    fn residual(&self, u: f64) -> f64 {
        self.grad * (u - self.shift) + self.error
    }
}

/// The full program.
#[derive(Debug, Clone, PartialEq)]
pub struct SlackQp {
    /// Objective center: the unconstrained minimizer of the `u` term.
    pub center: f64,
    /// Slack penalty weight, strictly positive.
    pub slack_weight: f64,
    pub rows: Vec<ConstraintRow>,
}

/// An optimal primal-dual point.
#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution {
    pub u: f64,
    /// Per-row slack values; zero on hard rows.
    pub deltas: Vec<f64>,
    /// Per-row Lagrange multipliers.
    pub multipliers: Vec<f64>,
    /// Indices of rows active at the optimum, ascending.
    pub active_set: Vec<usize>,
    /// Objective value at the solution.
    pub objective: f64,
}

/// Worst-case KKT residuals of a solution, all expected near zero. The
/// stationarity and complementarity entries are normalized by the magnitude
/// of the terms entering them, so the thresholds stay meaningful when
/// near-degenerate rows blow the multipliers up.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct KktReport {
    /// |2(u - center) + sum(lambda_k * grad_k)|, relative to the term scale.
    pub stationarity: f64,
    /// max_k constraint violation after slacks.
    pub primal: f64,
    /// max_k (-lambda_k), i.e. how negative the worst multiplier is.
    pub dual: f64,
    /// max_k |lambda_k * g_k| / max(1, lambda_k)
    pub complementarity: f64,
}

impl KktReport {
    pub fn within(&self, primal_tol: f64, dual_tol: f64, comp_tol: f64) -> bool {
        self.stationarity <= comp_tol
            && self.primal <= primal_tol
            && self.dual <= dual_tol
            && self.complementarity <= comp_tol
    }
}

impl SlackQp {
    pub fn new(center: f64, slack_weight: f64) -> Self {
        assert!(slack_weight > 0.0, "slack weight must be positive");
        Self {
            center,
            slack_weight,
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: ConstraintRow) {
        self.rows.push(row);
    }

    /// Objective value for a given `u` with the per-row slacks implied by it
    /// (hard rows contribute nothing).
    pub fn objective_at(&self, u: f64, deltas: &[f64]) -> f64 {
        let du = u - self.center;
        let slack: f64 = deltas.iter().map(|d| d * d).sum();
        du * du + self.slack_weight * slack
    }

    /// Interval of `u` admitted by the hard rows, `(lower, upper)`. The
    /// interval is empty (lower > upper) exactly when the program is
    /// infeasible; a zero-gradient hard row with a positive level makes it
    /// empty unconditionally.
    pub fn hard_interval(&self) -> (f64, f64) {
        let mut lower = f64::NEG_INFINITY;
        let mut upper = f64::INFINITY;
        for row in self.rows.iter().filter(|r| !r.slacked) {
            if row.grad > 0.0 {
                upper = upper.min(row.shift - row.error / row.grad);
            } else if row.grad < 0.0 {
                lower = lower.max(row.shift - row.error / row.grad);
            } else if row.error > FEAS_TOL {
                return (f64::INFINITY, f64::NEG_INFINITY);
            }
        }
        (lower, upper)
    }
}

/// KKT residuals of `solution` for `qp`.
pub fn kkt_report(qp: &SlackQp, solution: &QpSolution) -> KktReport {
    let mut stationarity = 2.0 * (solution.u - qp.center);
    let mut term_scale = 1.0f64.max(stationarity.abs());
    let mut primal: f64 = 0.0;
    let mut dual: f64 = 0.0;
    let mut complementarity: f64 = 0.0;
    for (k, row) in qp.rows.iter().enumerate() {
        let lambda = solution.multipliers[k];
        let g = row.residual(solution.u) - if row.slacked { solution.deltas[k] } else { 0.0 };
        stationarity += lambda * row.grad;
        term_scale = term_scale.max((lambda * row.grad).abs());
        primal = primal.max(g);
        dual = dual.max(-lambda);
        complementarity = complementarity.max((lambda * g).abs() / 1.0f64.max(lambda));
        if row.slacked {
            // The slack stationarity 2c*delta = lambda folds into the same
            // residual bucket.
            let slack_residual = (2.0 * qp.slack_weight * solution.deltas[k] - lambda).abs();
            complementarity = complementarity.max(slack_residual / 1.0f64.max(lambda));
        }
    }
    KktReport {
        stationarity: stationarity.abs() / term_scale,
        primal,
        dual,
        complementarity,
    }
}

/// Exact minimizer by enumeration of candidate active sets in order of
/// increasing cardinality, lexicographic within a cardinality. For each
/// candidate the stationarity system
///
/// ```text
///     2(u - center) + sum_{k active} lambda_k grad_k = 0,
///     lambda_k = 2c * (grad_k (u - shift_k) + error_k)   (slacked, active)
/// ```
///
/// is solved in closed form; the first candidate whose multipliers are
/// non-negative and whose inactive rows are feasible wins. Since the
/// objective is strictly convex the minimizer is unique, so degenerate
/// boundaries only affect which certificate is reported, never `u`.
///
/// At most one hard row can support the optimum of a one-dimensional
/// program, so candidates with two or more hard rows are skipped.
pub fn solve_active_set(qp: &SlackQp) -> Result<QpSolution, QpError> {
    let n = qp.rows.len();
    if n > MAX_ROWS {
        return Err(QpError::EnumerationLimit { rows: n });
    }
    let (lower, upper) = qp.hard_interval();
    if lower > upper {
        return Err(QpError::InfeasibleHard { lower, upper });
    }

    let mut best: Option<(f64, QpSolution)> = None;
    for cardinality in 0..=n {
        for candidate in (0..n).combinations(cardinality) {
            let hard_count = candidate.iter().filter(|&&k| !qp.rows[k].slacked).count();
            if hard_count > 1 {
                continue;
            }
            if let Some((violation, solution)) = try_candidate(qp, &candidate) {
                if violation <= FEAS_TOL {
                    return Ok(solution);
                }
                // Numerically marginal certificate; keep the best seen in
                // case no candidate passes cleanly.
                match &best {
                    Some((v, _)) if *v <= violation => {}
                    _ => best = Some((violation, solution)),
                }
            }
        }
    }
    // Exact arithmetic always certifies some candidate; under floating-point
    // rounding fall back to the least-violating one.
    Ok(best
        .map(|(_, s)| s)
        .expect("a feasible program admits a KKT candidate"))
}

/// Solves the stationarity system for one candidate active set. Returns the
/// worst constraint/dual violation alongside the assembled solution, or
/// `None` when the candidate is structurally invalid.
fn try_candidate(qp: &SlackQp, candidate: &[usize]) -> Option<(f64, QpSolution)> {
    let c = qp.slack_weight;
    let hard = candidate.iter().copied().find(|&k| !qp.rows[k].slacked);
    let slacked: Vec<usize> = candidate
        .iter()
        .copied()
        .filter(|&k| qp.rows[k].slacked)
        .collect();

    let u = match hard {
        Some(h) => {
            let row = &qp.rows[h];
            if row.grad == 0.0 {
                return None;
            }
            row.shift - row.error / row.grad
        }
        None => {
            // 2(u - center) + sum 2c a_k (a_k (u - w_k) + b_k) = 0
            let mut denom = 1.0;
            let mut numer = qp.center;
            for &k in &slacked {
                let row = &qp.rows[k];
                denom += c * row.grad * row.grad;
                numer += c * row.grad * (row.grad * row.shift - row.error);
            }
            numer / denom
        }
    };
    if !u.is_finite() {
        return None;
    }

    let mut multipliers = vec![0.0; qp.rows.len()];
    let mut deltas = vec![0.0; qp.rows.len()];
    let mut violation: f64 = 0.0;

    for &k in &slacked {
        let lambda = 2.0 * c * qp.rows[k].residual(u);
        violation = violation.max(-lambda.min(0.0));
        multipliers[k] = lambda.max(0.0);
        deltas[k] = multipliers[k] / (2.0 * c);
    }
    if let Some(h) = hard {
        let mut grad_sum = 2.0 * (u - qp.center);
        for &k in &slacked {
            grad_sum += multipliers[k] * qp.rows[k].grad;
        }
        let mu = -grad_sum / qp.rows[h].grad;
        violation = violation.max(-mu.min(0.0));
        multipliers[h] = mu.max(0.0);
    }
    if violation > DUAL_TOL.max(1e-9) {
        return None;
    }

    for (k, row) in qp.rows.iter().enumerate() {
        if candidate.contains(&k) {
            continue;
        }
        violation = violation.max(row.residual(u));
    }

    let objective = qp.objective_at(u, &deltas);
    Some((
        violation,
        QpSolution {
            u,
            deltas,
            multipliers,
            active_set: candidate.to_vec(),
            objective,
        },
    ))
}

/// Independent route to the same optimum: for a fixed `u` the optimal slack
/// of each slacked row is `max(0, grad*(u - shift) + error)`, which reduces
/// the program to minimizing the one-dimensional convex function
///
/// ```text
///     f(u) = (u - center)^2 + c * sum_k max(0, grad_k (u - shift_k) + error_k)^2
/// ```
///
/// over the hard-row interval. Ternary search brackets the minimizer to
/// `tol`.
pub fn solve_oracle(qp: &SlackQp, tol: f64) -> Result<QpSolution, QpError> {
    assert!(tol > 0.0);
    let (lower, upper) = qp.hard_interval();
    if lower > upper {
        return Err(QpError::InfeasibleHard { lower, upper });
    }

    let f = |u: f64| {
        let du = u - qp.center;
        let mut total = du * du;
        for row in qp.rows.iter().filter(|r| r.slacked) {
            let slack = row.residual(u).max(0.0);
            total += qp.slack_weight * slack * slack;
        }
        total
    };

    // The unconstrained minimizer lies within the hull of the objective
    // center and the rows' zero crossings; outside it f is monotone.
    let mut span_lo = qp.center;
    let mut span_hi = qp.center;
    for row in &qp.rows {
        if row.grad != 0.0 {
            let crossing = row.shift - row.error / row.grad;
            span_lo = span_lo.min(crossing);
            span_hi = span_hi.max(crossing);
        }
    }
    let u = if lower > span_hi {
        lower
    } else if upper < span_lo {
        upper
    } else {
        let mut lo = lower.max(span_lo - 1.0);
        let mut hi = upper.min(span_hi + 1.0);
        let mut iterations = 0;
        while hi - lo > tol && iterations < 500 {
            let m1 = lo + (hi - lo) / 3.0;
            let m2 = hi - (hi - lo) / 3.0;
            if f(m1) < f(m2) {
                hi = m2;
            } else {
                lo = m1;
            }
            iterations += 1;
        }
        // A minimizer pinned at a hard bound sits a fraction of `tol` inside
        // the bracket with a steep one-sided slope; snapping to the better
        // endpoint removes that bias.
        let mut best = 0.5 * (lo + hi);
        for endpoint in [lower, upper] {
            if endpoint.is_finite() && f(endpoint) < f(best) {
                best = endpoint;
            }
        }
        best
    };

    let mut deltas = vec![0.0; qp.rows.len()];
    let mut multipliers = vec![0.0; qp.rows.len()];
    let mut active_set = Vec::new();
    for (k, row) in qp.rows.iter().enumerate() {
        if row.slacked {
            let slack = row.residual(u).max(0.0);
            deltas[k] = slack;
            multipliers[k] = 2.0 * qp.slack_weight * slack;
            if slack > 0.0 {
                active_set.push(k);
            }
        }
    }
    // Attribute any remaining stationarity residual to a binding hard row.
    let mut grad_sum = 2.0 * (u - qp.center);
    for (k, row) in qp.rows.iter().enumerate() {
        grad_sum += multipliers[k] * row.grad;
    }
    if grad_sum.abs() > FEAS_TOL {
        let binding = qp
            .rows
            .iter()
            .enumerate()
            .filter(|(_, r)| !r.slacked && r.grad != 0.0)
            .min_by(|(_, a), (_, b)| {
                a.residual(u)
                    .abs()
                    .partial_cmp(&b.residual(u).abs())
                    .unwrap()
            });
        if let Some((k, row)) = binding {
            if row.residual(u).abs() <= (10.0 * tol).max(1e-6) {
                multipliers[k] = (-grad_sum / row.grad).max(0.0);
                active_set.push(k);
                active_set.sort_unstable();
            }
        }
    }

    let objective = qp.objective_at(u, &deltas);
    Ok(QpSolution {
        u,
        deltas,
        multipliers,
        active_set,
        objective,
    })
}

/// Closed form for the single-slacked-row lateral program, `center = 0`:
/// `u* = -c * grad * gamma(value) / (1 + c * grad^2)`.
pub fn lateral_closed_form(phi: PhiEval, slack_weight: f64, gamma: &GammaSpec) -> f64 {
    -slack_weight * phi.grad * gamma.eval(phi.value)
        / (1.0 + slack_weight * phi.grad * phi.grad)
}
