//! Cart-pole equations of motion, wheel normal force, RK4 discretization and
//! finite-difference linearization.

use nalgebra::{Matrix4, Vector4};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `[x_pos, x_vel, theta, theta_dot]`. The angle is never wrapped.
pub type State = Vector4<f64>;

/// Builds a state from its four components.
pub fn state(x_pos: f64, x_vel: f64, theta: f64, theta_dot: f64) -> State {
    Vector4::new(x_pos, x_vel, theta, theta_dot)
}

/// Perturbation used by [`linearize`].
pub const FD_STEP: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    /// Cart mass (kg).
    pub cart_mass: f64,
    /// Pole mass (kg).
    pub pole_mass: f64,
    /// Pole length (m).
    pub pole_length: f64,
    /// Gravitational acceleration (m/s^2).
    pub gravity: f64,
    /// Road friction coefficient.
    pub friction: f64,
}

impl ModelParams {
    /// Nominal plant: 4 kg cart, 1 kg pole.
    pub const NOMINAL: ModelParams = ModelParams {
        cart_mass: 4.0,
        pole_mass: 1.0,
        pole_length: 0.5,
        gravity: 9.81,
        friction: 0.5,
    };

    /// Same constants as `self` with the two masses replaced.
    pub fn with_masses(self, cart_mass: f64, pole_mass: f64) -> Self {
        ModelParams {
            cart_mass,
            pole_mass,
            ..self
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.cart_mass > 0.0
            && self.pole_mass > 0.0
            && self.pole_length > 0.0
            && self.gravity > 0.0
            && self.friction > 0.0
            && self.friction <= 1.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!(
                "invalid model parameters {self:?}"
            )))
        }
    }
}

impl Default for ModelParams {
    fn default() -> Self {
        Self::NOMINAL
    }
}

fn accelerations(s: &State, force: f64, p: &ModelParams) -> (f64, f64) {
    let (sin, cos) = s[2].sin_cos();
    let omega = s[3];
    let ml = p.pole_mass * p.pole_length;
    let denom = p.cart_mass + p.pole_mass * sin * sin;
    let x_acc = (force - (ml * omega * omega - p.pole_mass * p.gravity * cos) * sin) / denom;
    let theta_acc = cos
        * (force - (ml * omega * omega - (p.cart_mass + p.pole_mass) * p.gravity) * sin)
        / (p.pole_length * denom);
    (x_acc, theta_acc)
}

/// Time derivative of the state under wheel force `force` (N).
pub fn continuous_dynamics(s: &State, force: f64, p: &ModelParams) -> Result<State> {
    if !force.is_finite() || s.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("continuous_dynamics input"));
    }
    let (x_acc, theta_acc) = accelerations(s, force, p);
    Ok(state(s[1], x_acc, s[3], theta_acc))
}

/// Wheel normal force `F_z` (N). Affine in `force` for a fixed state.
pub fn normal_force(s: &State, force: f64, p: &ModelParams) -> f64 {
    let (sin, cos) = s[2].sin_cos();
    let (_, theta_acc) = accelerations(s, force, p);
    p.cart_mass * p.gravity
        + p.pole_mass * (p.gravity - p.pole_length * (theta_acc * sin + s[3] * s[3] * cos))
}

/// `F_z(s, F) = offset + slope * F`.
pub fn normal_force_affine(s: &State, p: &ModelParams) -> (f64, f64) {
    let (sin, cos) = s[2].sin_cos();
    let denom = p.cart_mass + p.pole_mass * sin * sin;
    let offset = normal_force(s, 0.0, p);
    let slope = -p.pole_mass * sin * cos / denom;
    (offset, slope)
}

/// Friction-constraint function `|u / (mu F_z)| - 1`.
pub fn friction_usage(s: &State, force: f64, p: &ModelParams) -> f64 {
    (force / (p.friction * normal_force(s, force, p))).abs() - 1.0
}

/// Classic RK4 with the force held over the step. Unchecked; see [`step_rk4`].
pub fn rk4(s: &State, force: f64, p: &ModelParams, dt: f64) -> State {
    let f = |x: &State| {
        let (xa, ta) = accelerations(x, force, p);
        state(x[1], xa, x[3], ta)
    };
    let k1 = f(s);
    let k2 = f(&(s + k1 * (0.5 * dt)));
    let k3 = f(&(s + k2 * (0.5 * dt)));
    let k4 = f(&(s + k3 * dt));
    s + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0)
}

/// One discrete step of the cart-pole.
pub fn step_rk4(s: &State, force: f64, p: &ModelParams, dt: f64) -> Result<State> {
    if !(dt > 0.0) {
        return Err(Error::InvalidConfig(format!(
            "dt must be positive, got {dt}"
        )));
    }
    if !force.is_finite() || s.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("step_rk4 input"));
    }
    let next = rk4(s, force, p, dt);
    if next.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("step_rk4 output"));
    }
    Ok(next)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LinearizedModel {
    pub a: Matrix4<f64>,
    pub b: Vector4<f64>,
    pub state: State,
    pub force: f64,
}

/// Central-difference Jacobians of the discrete map with perturbation `h`.
pub fn linearize_with_step(
    s: &State,
    force: f64,
    p: &ModelParams,
    dt: f64,
    h: f64,
) -> LinearizedModel {
    let mut a = Matrix4::zeros();
    for j in 0..4 {
        let mut plus = *s;
        let mut minus = *s;
        plus[j] += h;
        minus[j] -= h;
        let col = (rk4(&plus, force, p, dt) - rk4(&minus, force, p, dt)) / (2.0 * h);
        a.set_column(j, &col);
    }
    let b = (rk4(s, force + h, p, dt) - rk4(s, force - h, p, dt)) / (2.0 * h);
    LinearizedModel {
        a,
        b,
        state: *s,
        force,
    }
}

/// Jacobians `A = df/dx`, `B = df/du` of [`step_rk4`] at `(s, force)`.
pub fn linearize(s: &State, force: f64, p: &ModelParams, dt: f64) -> LinearizedModel {
    linearize_with_step(s, force, p, dt, FD_STEP)
}
