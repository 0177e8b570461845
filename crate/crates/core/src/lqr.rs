//! Discrete-time LQR for the ancillary error feedback.

use nalgebra::{SMatrix, SVector};
use serde::{Deserialize, Serialize};

use crate::dynamics::{linearize, ModelParams, State};
use crate::error::{Error, Result};

pub const DARE_TOL: f64 = 1e-10;
pub const DARE_MAX_ITER: usize = 10_000;

/// Solution of the DARE for an `N`-state, single-input pair.
#[derive(Clone, Debug)]
pub struct DareSolution<const N: usize> {
    pub p: SMatrix<f64, N, N>,
    /// Applied gain: `u = k . e` stabilizes `e+ = (A + B k) e`.
    pub k: SVector<f64, N>,
    pub iterations: usize,
    pub residual: f64,
    pub spectral_radius: f64,
}

/// Ancillary feedback `u = K (x - x_bar)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AncillaryGain {
    pub k: [f64; 4],
    pub spectral_radius: f64,
    pub residual: f64,
}

impl AncillaryGain {
    pub fn from_row(k: [f64; 4]) -> Self {
        AncillaryGain {
            k,
            spectral_radius: f64::NAN,
            residual: f64::NAN,
        }
    }

    pub fn input(&self, actual: &State, nominal: &State) -> f64 {
        ancillary_input(self, actual, nominal)
    }
}

/// `K (actual - nominal)`.
pub fn ancillary_input(gain: &AncillaryGain, actual: &State, nominal: &State) -> f64 {
    let e = actual - nominal;
    gain.k.iter().zip(e.iter()).map(|(k, e)| k * e).sum()
}

/// `A'PA - P - A'PB (R + B'PB)^-1 B'PA + Q`.
pub fn dare_residual<const N: usize>(
    a: &SMatrix<f64, N, N>,
    b: &SVector<f64, N>,
    q: &SMatrix<f64, N, N>,
    r: f64,
    p: &SMatrix<f64, N, N>,
) -> SMatrix<f64, N, N> {
    let pb = p * b;
    let s = r + b.dot(&pb);
    let bpa = (a.transpose() * pb).transpose();
    a.transpose() * p * a - p - bpa.transpose() * bpa / s + q
}

/// Spectral radius via the eigenvalues of a general real matrix.
pub fn spectral_radius<const N: usize>(m: &SMatrix<f64, N, N>) -> f64 {
    let dm = nalgebra::DMatrix::from_iterator(N, N, m.iter().copied());
    dm.complex_eigenvalues()
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max)
}

/// Value iteration on the Riccati recursion until `||P+ - P||_F < 1e-10`.
pub fn solve_dare<const N: usize>(
    a: &SMatrix<f64, N, N>,
    b: &SVector<f64, N>,
    q: &SMatrix<f64, N, N>,
    r: f64,
) -> Result<DareSolution<N>> {
    if !(r > 0.0) {
        return Err(Error::InvalidConfig(format!(
            "LQR input weight must be positive, got {r}"
        )));
    }
    let mut p = *q;
    for it in 1..=DARE_MAX_ITER {
        let pb = p * b;
        let s = r + b.dot(&pb);
        let bpa = (a.transpose() * pb).transpose();
        let mut next = a.transpose() * p * a - bpa.transpose() * bpa / s + q;
        next = (next + next.transpose()) * 0.5;
        if next.iter().any(|v| !v.is_finite()) {
            return Err(Error::DareNotConverged(it));
        }
        let delta = (next - p).norm();
        p = next;
        if delta < DARE_TOL {
            let pb = p * b;
            let s = r + b.dot(&pb);
            let k = -(a.transpose() * pb) / s;
            let closed = a + b * k.transpose();
            let spectral_radius = spectral_radius(&closed);
            let residual = dare_residual(a, b, q, r, &p).norm();
            if spectral_radius >= 1.0 {
                return Err(Error::DareNotConverged(it));
            }
            return Ok(DareSolution {
                p,
                k,
                iterations: it,
                residual,
                spectral_radius,
            });
        }
    }
    Err(Error::DareNotConverged(DARE_MAX_ITER))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LqrWeights {
    pub q: [f64; 4],
    pub r: f64,
}

impl Default for LqrWeights {
    fn default() -> Self {
        LqrWeights {
            q: [200.0, 3.3, 2400.0, 5400.0],
            r: 1.0,
        }
    }
}

/// Ancillary gain from the model linearized at the upright origin.
pub fn origin_gain(params: &ModelParams, dt: f64, weights: &LqrWeights) -> Result<AncillaryGain> {
    let lin = linearize(&State::zeros(), 0.0, params, dt);
    let q = SMatrix::<f64, 4, 4>::from_diagonal(&SVector::from(weights.q));
    let sol = solve_dare(&lin.a, &lin.b, &q, weights.r)?;
    Ok(AncillaryGain {
        k: sol.k.into(),
        spectral_radius: sol.spectral_radius,
        residual: sol.residual,
    })
}
