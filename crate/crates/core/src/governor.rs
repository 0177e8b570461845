//! Parameter governor: rescales the combined control input so the friction
//! usage on the true plant equals the usage the nominal model would see.
//!
//! The refined input solves `u* = u F_z(x, u*, M) / F_z(x_bar, u, M_bar)`.
//! Because `F_z` is affine in the force, this is a linear equation in `u*`.

use serde::{Deserialize, Serialize};

use crate::dynamics::{normal_force, normal_force_affine, ModelParams, State};
use crate::error::{Error, Result};

/// Pivot and denominator threshold (N for `F_z`, dimensionless for the pivot).
pub const PIVOT_TOL: f64 = 1e-6;
pub const PICARD_MAX_ITER: usize = 50;
pub const RESIDUAL_TOL: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GovernorMethod {
    AffineClosedForm,
    FixedPoint,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GovernorResult {
    pub refined: f64,
    /// `|g(x, u*, M) - g(x_bar, u, M_bar)|`.
    pub residual: f64,
    pub method: GovernorMethod,
    pub iterations: usize,
}

pub use crate::dynamics::friction_usage as friction_constraint;

/// `|u* - u F_z(x, u*, M) / c|`, the defining equation of the refinement.
pub fn fixed_point_residual(u: f64, u_star: f64, x: &State, c: f64, plant: &ModelParams) -> f64 {
    (u_star - u * normal_force(x, u_star, plant) / c).abs()
}

pub fn refine(
    u: f64,
    actual: &State,
    nominal: &State,
    plant: &ModelParams,
    model: &ModelParams,
) -> Result<GovernorResult> {
    if !u.is_finite() || actual.iter().chain(nominal.iter()).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("governor input"));
    }
    let c = normal_force(nominal, u, model);
    if c.abs() < PIVOT_TOL {
        return Err(Error::GovernorSingular { pivot: c });
    }
    let target = friction_constraint(nominal, u, model);
    let (a, b) = normal_force_affine(actual, plant);
    let pivot = 1.0 - u * b / c;

    let (refined, method, iterations) = if pivot.abs() >= PIVOT_TOL {
        (u * a / c / pivot, GovernorMethod::AffineClosedForm, 1)
    } else {
        let mut v = u;
        let mut it = 0;
        while it < PICARD_MAX_ITER {
            it += 1;
            let next = u * normal_force(actual, v, plant) / c;
            if !next.is_finite() {
                break;
            }
            let done = (next - v).abs() <= RESIDUAL_TOL * next.abs().max(1.0);
            v = next;
            if done {
                break;
            }
        }
        (v, GovernorMethod::FixedPoint, it)
    };

    if !refined.is_finite()
        || fixed_point_residual(u, refined, actual, c, plant) >= RESIDUAL_TOL * u.abs().max(1.0)
    {
        return Err(Error::GovernorSingular { pivot });
    }
    if normal_force(actual, refined, plant).abs() < PIVOT_TOL {
        return Err(Error::GovernorSingular { pivot });
    }
    let residual = (friction_constraint(actual, refined, plant) - target).abs();
    Ok(GovernorResult {
        refined,
        residual,
        method,
        iterations,
    })
}

/// `e_g(k) = g(x(k), u(k), M) - g(x_bar(k), u_bar(k), M_bar)` where `u(k)`
/// is the input the controller applied (refined when the governor ran) and
/// `u_bar(k)` the nominal input that drove the shadow state.
pub fn constraint_gap_series(
    actual: &[State],
    nominal: &[State],
    applied: &[f64],
    nominal_inputs: &[f64],
    plant: &ModelParams,
    model: &ModelParams,
) -> Result<Vec<f64>> {
    let n = applied.len();
    if actual.len() < n || nominal.len() < n || nominal_inputs.len() != n {
        return Err(Error::Shape(format!(
            "misaligned series: {} actual, {} nominal, {} applied, {} nominal inputs",
            actual.len(),
            nominal.len(),
            n,
            nominal_inputs.len()
        )));
    }
    Ok((0..n)
        .map(|k| {
            friction_constraint(&actual[k], applied[k], plant)
                - friction_constraint(&nominal[k], nominal_inputs[k], model)
        })
        .collect())
}
