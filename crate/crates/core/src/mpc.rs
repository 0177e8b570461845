//! Nonlinear MPC for the cart-pole with the tightened friction-limit
//! constraint `|F / (mu F_z)| <= 1 - gamma`.
//!
//! The solver is single-shooting iLQR wrapped in an augmented Lagrangian for
//! the two one-sided friction constraints. Dynamics Jacobians come from
//! [`linearize`]; constraint gradients from central differences of
//! [`normal_force`].

use nalgebra::{Matrix4, Matrix5, Vector4, Vector5};
use serde::{Deserialize, Serialize};

use crate::dynamics::{linearize, normal_force, rk4, ModelParams, State};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverSettings {
    pub initial_penalty: f64,
    pub penalty_growth: f64,
    pub max_penalty: f64,
    pub max_outer: usize,
    pub max_inner: usize,
    /// Trust-region box on the force (N).
    pub input_bound: f64,
    pub constraint_tol: f64,
    /// Stationarity tolerance, scaled by `max(1, J)`.
    pub stationarity_tol: f64,
}

impl Default for SolverSettings {
    fn default() -> Self {
        SolverSettings {
            initial_penalty: 10.0,
            penalty_growth: 10.0,
            max_penalty: 1e8,
            max_outer: 20,
            max_inner: 100,
            input_bound: 40.0,
            constraint_tol: 1e-6,
            stationarity_tol: 1e-5,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MpcConfig {
    pub horizon: usize,
    pub q: [f64; 4],
    pub r: f64,
    pub gamma: f64,
    pub params: ModelParams,
    pub dt: f64,
    #[serde(default)]
    pub solver: SolverSettings,
}

impl Default for MpcConfig {
    fn default() -> Self {
        MpcConfig {
            horizon: 50,
            q: [20.0, 0.0, 5.0, 0.0],
            r: 0.001,
            gamma: 0.2,
            params: ModelParams::NOMINAL,
            dt: 0.05,
            solver: SolverSettings::default(),
        }
    }
}

impl MpcConfig {
    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        let ok = self.horizon >= 1
            && self.q.iter().all(|q| *q >= 0.0)
            && self.r > 0.0
            && (0.0..1.0).contains(&self.gamma)
            && self.dt > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!("invalid MPC config {self:?}")))
        }
    }

    /// Allowed fraction of the friction limit.
    pub fn friction_budget(&self) -> f64 {
        1.0 - self.gamma
    }

    fn stage_cost(&self, x: &State, u: f64) -> f64 {
        (0..4).map(|i| self.q[i] * x[i] * x[i]).sum::<f64>() + self.r * u * u
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MpcSolution {
    pub inputs: Vec<f64>,
    /// `horizon + 1` states starting at the query state.
    pub states: Vec<State>,
    pub cost: f64,
    /// `max_k max(0, |F_k / (mu F_z,k)| - (1 - gamma))`.
    pub max_violation: f64,
    /// Scaled infinity norm of the augmented-objective gradient.
    pub stationarity: f64,
    pub iterations: usize,
    pub outer_iterations: usize,
    pub converged: bool,
    /// True cost after each outer iteration.
    pub outer_costs: Vec<f64>,
}

impl MpcSolution {
    pub fn first_input(&self) -> f64 {
        self.inputs[0]
    }

    /// Inputs shifted one step ahead with the last element repeated.
    pub fn shifted_inputs(&self) -> Vec<f64> {
        let mut u: Vec<f64> = self.inputs.iter().skip(1).copied().collect();
        u.push(*self.inputs.last().expect("non-empty horizon"));
        u
    }
}

/// `F / (mu F_z)` at a node.
pub fn friction_ratio(x: &State, u: f64, p: &ModelParams) -> f64 {
    u / (p.friction * normal_force(x, u, p))
}

const CONSTRAINT_FD: f64 = 1e-6;

fn ratio_gradient(x: &State, u: f64, p: &ModelParams) -> Vector5<f64> {
    let mut g = Vector5::zeros();
    for j in 0..4 {
        let mut xp = *x;
        let mut xm = *x;
        xp[j] += CONSTRAINT_FD;
        xm[j] -= CONSTRAINT_FD;
        g[j] = (friction_ratio(&xp, u, p) - friction_ratio(&xm, u, p)) / (2.0 * CONSTRAINT_FD);
    }
    g[4] = (friction_ratio(x, u + CONSTRAINT_FD, p) - friction_ratio(x, u - CONSTRAINT_FD, p))
        / (2.0 * CONSTRAINT_FD);
    g
}

/// Multipliers for the upper (`+ratio`) and lower (`-ratio`) constraints.
#[derive(Clone, Debug)]
struct Multipliers {
    upper: Vec<f64>,
    lower: Vec<f64>,
    penalty: f64,
}

struct Rollout {
    states: Vec<State>,
    inputs: Vec<f64>,
    ratios: Vec<f64>,
    cost: f64,
    augmented: f64,
}

/// Per-call workspace. Not re-entrant; create one per worker.
pub struct MpcSolver {
    cfg: MpcConfig,
}

impl MpcSolver {
    pub fn new(cfg: MpcConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(MpcSolver { cfg })
    }

    pub fn config(&self) -> &MpcConfig {
        &self.cfg
    }

    fn rollout(&self, x0: &State, inputs: &[f64], mult: &Multipliers) -> Rollout {
        let cfg = &self.cfg;
        let n = cfg.horizon;
        let mut states = Vec::with_capacity(n + 1);
        states.push(*x0);
        let mut ratios = Vec::with_capacity(n);
        let mut cost = 0.0;
        let mut augmented = 0.0;
        for (i, &u) in inputs.iter().enumerate() {
            let x = states[i];
            cost += cfg.stage_cost(&x, u);
            let ratio = friction_ratio(&x, u, &cfg.params);
            augmented += penalty_value(ratio - cfg.friction_budget(), mult.upper[i], mult.penalty)
                + penalty_value(-ratio - cfg.friction_budget(), mult.lower[i], mult.penalty);
            ratios.push(ratio);
            states.push(rk4(&x, u, &cfg.params, cfg.dt));
        }
        Rollout {
            states,
            inputs: inputs.to_vec(),
            ratios,
            cost,
            augmented: cost + augmented,
        }
    }

    fn violation(&self, ratios: &[f64]) -> f64 {
        let budget = self.cfg.friction_budget();
        ratios
            .iter()
            .map(|r| (r.abs() - budget).max(0.0))
            .fold(0.0, f64::max)
    }

    /// Stage derivatives of the augmented cost (Gauss-Newton on the penalty).
    fn stage_derivatives(
        &self,
        x: &State,
        u: f64,
        ratio: f64,
        i: usize,
        mult: &Multipliers,
    ) -> (Vector5<f64>, Matrix5<f64>) {
        let cfg = &self.cfg;
        let mut grad = Vector5::zeros();
        let mut hess = Matrix5::zeros();
        for j in 0..4 {
            grad[j] = 2.0 * cfg.q[j] * x[j];
            hess[(j, j)] = 2.0 * cfg.q[j];
        }
        grad[4] = 2.0 * cfg.r * u;
        hess[(4, 4)] = 2.0 * cfg.r;
        let budget = cfg.friction_budget();
        let upper = mult.upper[i] + mult.penalty * (ratio - budget);
        let lower = mult.lower[i] + mult.penalty * (-ratio - budget);
        if upper > 0.0 || lower > 0.0 {
            let dr = ratio_gradient(x, u, &cfg.params);
            if upper > 0.0 {
                grad += dr * upper;
                hess += dr * dr.transpose() * mult.penalty;
            }
            if lower > 0.0 {
                grad -= dr * lower;
                hess += dr * dr.transpose() * mult.penalty;
            }
        }
        (grad, hess)
    }

    /// Adjoint gradient of the augmented objective with respect to the inputs.
    fn adjoint_gradient(
        &self,
        jac: &[(Matrix4<f64>, Vector4<f64>)],
        derivs: &[(Vector5<f64>, Matrix5<f64>)],
    ) -> Vec<f64> {
        let n = self.cfg.horizon;
        let mut lambda = Vector4::zeros();
        let mut grad = vec![0.0; n];
        for i in (0..n).rev() {
            let (a, b) = &jac[i];
            let (g, _) = &derivs[i];
            grad[i] = g[4] + b.dot(&lambda);
            lambda = g.fixed_rows::<4>(0) + a.transpose() * lambda;
        }
        grad
    }

    fn scaled_stationarity(&self, grad: &[f64], cost: f64) -> f64 {
        grad.iter().fold(0.0f64, |m, g| m.max(g.abs())) / cost.abs().max(1.0)
    }

    fn linearize_all(&self, roll: &Rollout) -> Vec<(Matrix4<f64>, Vector4<f64>)> {
        let cfg = &self.cfg;
        (0..cfg.horizon)
            .map(|i| {
                let lin = linearize(&roll.states[i], roll.inputs[i], &cfg.params, cfg.dt);
                (lin.a, lin.b)
            })
            .collect()
    }

    /// Runs iLQR on the augmented objective until it stalls or is stationary.
    /// Returns (rollout, inner iterations, stationarity).
    fn inner_solve(
        &self,
        x0: &State,
        mut roll: Rollout,
        mult: &Multipliers,
    ) -> (Rollout, usize, f64) {
        let cfg = &self.cfg;
        let n = cfg.horizon;
        let bound = cfg.solver.input_bound;
        let mut reg = 1e-9;
        let mut iterations = 0;
        let mut stationarity;
        let mut k_ff = vec![0.0; n];
        let mut k_fb = vec![Vector4::zeros(); n];
        while iterations < cfg.solver.max_inner {
            iterations += 1;
            let jac = self.linearize_all(&roll);
            let derivs: Vec<_> = (0..n)
                .map(|i| {
                    self.stage_derivatives(&roll.states[i], roll.inputs[i], roll.ratios[i], i, mult)
                })
                .collect();
            let grad = self.adjoint_gradient(&jac, &derivs);
            stationarity = self.scaled_stationarity(&grad, roll.augmented);
            if stationarity < 1e-2 * cfg.solver.stationarity_tol {
                break;
            }

            // backward pass, retried with heavier regularization on failure
            let mut expected = (0.0, 0.0);
            let mut ok = false;
            while !ok {
                let mut vx = Vector4::zeros();
                let mut vxx = Matrix4::zeros();
                expected = (0.0, 0.0);
                ok = true;
                for i in (0..n).rev() {
                    let (a, b) = &jac[i];
                    let (g, h) = &derivs[i];
                    let lx = g.fixed_rows::<4>(0).into_owned();
                    let lu = g[4];
                    let lxx = h.fixed_view::<4, 4>(0, 0).into_owned();
                    let lux = h.fixed_view::<1, 4>(4, 0).transpose();
                    let luu = h[(4, 4)];
                    let qx = lx + a.transpose() * vx;
                    let qu = lu + b.dot(&vx);
                    let vxx_b = vxx * b;
                    let qxx = lxx + a.transpose() * vxx * a;
                    let quu = luu + b.dot(&vxx_b) + reg;
                    let qux = lux + a.transpose() * vxx_b;
                    if !(quu > 0.0) || !quu.is_finite() {
                        ok = false;
                        break;
                    }
                    let kf = -qu / quu;
                    let kb = -qux / quu;
                    k_ff[i] = kf;
                    k_fb[i] = kb;
                    expected.0 += kf * qu;
                    expected.1 += 0.5 * kf * kf * quu;
                    vx = qx + kb * (quu * kf) + kb * qu + qux * kf;
                    vxx = qxx
                        + kb * kb.transpose() * quu
                        + kb * qux.transpose()
                        + qux * kb.transpose();
                    vxx = (vxx + vxx.transpose()) * 0.5;
                }
                if !ok {
                    reg = (reg * 10.0).max(1e-6);
                    if reg > 1e12 {
                        return (roll, iterations, stationarity);
                    }
                }
            }

            // forward line search
            let mut accepted = None;
            let mut alpha = 1.0;
            for _ in 0..12 {
                let mut states = Vec::with_capacity(n + 1);
                states.push(*x0);
                let mut inputs = Vec::with_capacity(n);
                for i in 0..n {
                    let dx = states[i] - roll.states[i];
                    let u =
                        (roll.inputs[i] + alpha * k_ff[i] + k_fb[i].dot(&dx)).clamp(-bound, bound);
                    inputs.push(u);
                    states.push(rk4(&states[i], u, &cfg.params, cfg.dt));
                }
                if states.iter().all(|s| s.iter().all(|v| v.is_finite())) {
                    let cand = self.rollout(x0, &inputs, mult);
                    let predicted = -(alpha * expected.0 + alpha * alpha * expected.1);
                    let actual = roll.augmented - cand.augmented;
                    if actual > 0.0 && (predicted <= 0.0 || actual >= 1e-4 * predicted) {
                        accepted = Some(cand);
                        break;
                    }
                }
                alpha *= 0.5;
            }
            match accepted {
                Some(cand) => {
                    let decrease = roll.augmented - cand.augmented;
                    roll = cand;
                    reg = (reg / 10.0).max(1e-9);
                    if decrease < 1e-13 * roll.augmented.abs().max(1.0) {
                        break;
                    }
                }
                None => {
                    reg = (reg * 100.0).max(1e-6);
                    if reg > 1e12 {
                        break;
                    }
                }
            }
        }
        // final stationarity at the returned iterate
        let jac = self.linearize_all(&roll);
        let derivs: Vec<_> = (0..n)
            .map(|i| {
                self.stage_derivatives(&roll.states[i], roll.inputs[i], roll.ratios[i], i, mult)
            })
            .collect();
        let grad = self.adjoint_gradient(&jac, &derivs);
        stationarity = self.scaled_stationarity(&grad, roll.augmented);
        (roll, iterations, stationarity)
    }

    /// Solves the MPC problem from `x0`. Non-convergence is reported through
    /// `converged = false` with the best iterate.
    pub fn solve(&mut self, x0: &State, warm_start: Option<&MpcSolution>) -> Result<MpcSolution> {
        if x0.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("MPC initial state"));
        }
        let cfg = self.cfg;
        let n = cfg.horizon;
        let bound = cfg.solver.input_bound;
        let guess: Vec<f64> = match warm_start {
            Some(prev) if prev.inputs.len() == n => prev.shifted_inputs(),
            _ => vec![0.0; n],
        }
        .into_iter()
        .map(|u| u.clamp(-bound, bound))
        .collect();

        let mut mult = Multipliers {
            upper: vec![0.0; n],
            lower: vec![0.0; n],
            penalty: cfg.solver.initial_penalty,
        };
        let mut roll = self.rollout(x0, &guess, &mult);
        let mut iterations = 0;
        let mut outer_costs = Vec::new();
        let mut stationarity;
        let mut converged = false;
        let mut outer = 0;
        loop {
            outer += 1;
            let (r, it, stat) = self.inner_solve(x0, roll, &mult);
            roll = r;
            iterations += it;
            stationarity = stat;
            outer_costs.push(roll.cost);
            let violation = self.violation(&roll.ratios);
            if violation <= cfg.solver.constraint_tol && stationarity <= cfg.solver.stationarity_tol
            {
                converged = true;
                break;
            }
            if outer >= cfg.solver.max_outer {
                break;
            }
            let budget = cfg.friction_budget();
            for i in 0..n {
                let ratio = roll.ratios[i];
                mult.upper[i] = (mult.upper[i] + mult.penalty * (ratio - budget)).max(0.0);
                mult.lower[i] = (mult.lower[i] + mult.penalty * (-ratio - budget)).max(0.0);
            }
            if violation > cfg.solver.constraint_tol {
                mult.penalty =
                    (mult.penalty * cfg.solver.penalty_growth).min(cfg.solver.max_penalty);
            }
            roll = self.rollout(x0, &roll.inputs, &mult);
        }
        let max_violation = self.violation(&roll.ratios);
        Ok(MpcSolution {
            inputs: roll.inputs,
            states: roll.states,
            cost: roll.cost,
            max_violation,
            stationarity,
            iterations,
            outer_iterations: outer,
            converged,
            outer_costs,
        })
    }

    /// First element of the optimal input sequence, with the full solution
    /// for warm-starting the next call.
    pub fn receding_control(
        &mut self,
        x_bar: &State,
        warm_start: Option<&MpcSolution>,
    ) -> Result<(f64, MpcSolution)> {
        let sol = self.solve(x_bar, warm_start)?;
        Ok((sol.first_input(), sol))
    }
}

/// PHR augmented-Lagrangian term for `c <= 0`.
fn penalty_value(c: f64, lambda: f64, rho: f64) -> f64 {
    let shifted = (lambda + rho * c).max(0.0);
    (shifted * shifted - lambda * lambda) / (2.0 * rho)
}

/// Convenience wrapper over [`MpcSolver::solve`].
pub fn solve(x0: &State, cfg: &MpcConfig, warm_start: Option<&MpcSolution>) -> Result<MpcSolution> {
    MpcSolver::new(*cfg)?.solve(x0, warm_start)
}

/// Convenience wrapper over [`MpcSolver::receding_control`].
pub fn receding_control(
    x_bar: &State,
    cfg: &MpcConfig,
    warm_start: Option<&MpcSolution>,
) -> Result<(f64, MpcSolution)> {
    MpcSolver::new(*cfg)?.receding_control(x_bar, warm_start)
}
