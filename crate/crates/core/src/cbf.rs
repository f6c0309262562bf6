//! Task-error functions and their gradients with respect to the controlled
//! coordinate, plus the extended class-K shaping function. Each error value
//! feeds one constraint row of the per-vehicle optimization.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Gradient-denominator floor in [`phi_neighbor_ca`]; keeps the repulsion
/// finite one step before the collision abort fires.
pub const DEN_EPS: f64 = 1e-9;

/// Slack below the safe radius tolerated before a gap counts as a collision.
pub const SAFETY_TOL: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum CbfError {
    /// Two vehicles share one longitudinal position; the scenario is invalid.
    #[error("coincident longitudinal positions at x = {0}")]
    Coincident(f64),
    /// A gap dropped below the safe radius; the simulation must abort.
    #[error("gap {gap} below safe radius {safe_radius}")]
    Unsafe { gap: f64, safe_radius: f64 },
}

/// A task error and its derivative with respect to the controlled coordinate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhiEval {
    pub value: f64,
    pub grad: f64,
}

/// Extended class-K function shaping the constraint convergence rate.
/// Strictly increasing with gamma(0) = 0; the power law is extended to
/// signed arguments as an odd function.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GammaSpec {
    Identity,
    PowerLaw { gain: f64, exponent: f64 },
}

impl GammaSpec {
    pub fn eval(&self, phi: f64) -> f64 {
        match *self {
            GammaSpec::Identity => phi,
            GammaSpec::PowerLaw { gain, exponent } => {
                sign0(phi) * gain * phi.abs().powf(exponent)
            }
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        match *self {
            GammaSpec::Identity => Ok(()),
            GammaSpec::PowerLaw { gain, exponent } => {
                if !(gain > 0.0) {
                    Err(format!("power-law gain must be positive, got {gain}"))
                } else if !(exponent > 0.0 && exponent < 1.0) {
                    Err(format!("power-law exponent must lie in (0, 1), got {exponent}"))
                } else {
                    Ok(())
                }
            }
        }
    }
}

/// Sign with the convention sign(0) = 0, so gradients vanish exactly on the
/// target set at absolute-value kinks.
pub fn sign0(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Spacing-regulation error against the vehicle ahead: zero exactly at the
/// sensing radius, quadratic elsewhere.
pub fn phi_long_regulation(x_i: f64, x_ahead: f64, sensing_radius: f64) -> PhiEval {
    let miss = x_ahead - x_i - sensing_radius;
    PhiEval {
        value: miss * miss,
        grad: -2.0 * miss,
    }
}

/// Same-lane separation error: positive once two vehicles are closer than
/// the safe radius.
pub fn phi_same_lane(x_i: f64, x_other: f64, safe_radius: f64) -> Result<PhiEval, CbfError> {
    let diff = x_i - x_other;
    if diff == 0.0 {
        return Err(CbfError::Coincident(x_i));
    }
    Ok(PhiEval {
        value: safe_radius - diff.abs(),
        grad: -sign0(diff),
    })
}

/// Lateral distance to the desired lane.
pub fn phi_lateral(y_i: f64, y_lane: f64) -> PhiEval {
    PhiEval {
        value: (y_i - y_lane).abs(),
        grad: sign0(y_i - y_lane),
    }
}

/// Longitudinal distance to the virtual target.
pub fn phi_target(x_i: f64, x_target: f64) -> PhiEval {
    PhiEval {
        value: (x_i - x_target).abs(),
        grad: sign0(x_i - x_target),
    }
}

/// Reciprocal-barrier separation error against a sensed neighbor: zero at
/// the platoon spacing bound, unbounded as the gap approaches the safe
/// radius.
pub fn phi_neighbor_ca(
    x_i: f64,
    x_j: f64,
    safe_radius: f64,
    switch_gap: f64,
) -> Result<PhiEval, CbfError> {
    let diff = x_i - x_j;
    let gap = diff.abs();
    let margin = gap - safe_radius;
    if margin < -SAFETY_TOL {
        return Err(CbfError::Unsafe { gap, safe_radius });
    }
    let value = 1.0 / margin.max(DEN_EPS) - 1.0 / (switch_gap - safe_radius);
    let grad = -sign0(diff) / (margin * margin).max(DEN_EPS);
    Ok(PhiEval { value, grad })
}
