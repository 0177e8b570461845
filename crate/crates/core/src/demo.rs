//! Demonstration collection in the nominal domain, domain-randomized
//! baseline datasets, and training orchestration.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dynamics::{rk4, state, ModelParams, State};
use crate::error::{Error, Result};
use crate::io;
use crate::lqr::AncillaryGain;
use crate::mlp::{self, TrainConfig, WeightsFile};
use crate::mpc::{MpcConfig, MpcSolution, MpcSolver};
use crate::sim::{self, Controllers, SimConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Domain {
    Nominal,
    Target,
}

/// A state/input sequence with per-step solver diagnostics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    /// `inputs.len() + 1` states; the last one is where the run ended.
    pub states: Vec<State>,
    pub inputs: Vec<f64>,
    pub converged: Vec<bool>,
    pub iterations: Vec<usize>,
    pub domain: Domain,
    pub seed: u64,
}

/// One CSV row of a trajectory or dataset file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DemoRow {
    pub k: usize,
    pub x_pos: f64,
    pub x_vel: f64,
    pub theta: f64,
    pub theta_dot: f64,
    pub u: f64,
    pub converged: bool,
}

impl DemoRow {
    fn new(k: usize, s: &State, u: f64, converged: bool) -> Self {
        DemoRow {
            k,
            x_pos: s[0],
            x_vel: s[1],
            theta: s[2],
            theta_dot: s[3],
            u,
            converged,
        }
    }

    fn state(&self) -> State {
        state(self.x_pos, self.x_vel, self.theta, self.theta_dot)
    }
}

/// JSON sidecar written next to every trajectory or dataset CSV.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub kind: String,
    pub mode: String,
    pub seed: u64,
    pub config_hash: String,
    pub rows: usize,
    pub trajectories: usize,
    pub final_state: Option<[f64; 4]>,
}

fn sidecar_path(csv: &Path) -> std::path::PathBuf {
    csv.with_extension("json")
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn final_state(&self) -> &State {
        self.states
            .last()
            .expect("trajectory holds at least its initial state")
    }

    /// Largest deviation between consecutive states and an RK4 step of the
    /// recorded input.
    pub fn consistency_error(&self, params: &ModelParams, dt: f64) -> f64 {
        (0..self.len())
            .map(|k| (rk4(&self.states[k], self.inputs[k], params, dt) - self.states[k + 1]).amax())
            .fold(0.0, f64::max)
    }

    pub fn rows(&self) -> Vec<DemoRow> {
        (0..self.len())
            .map(|k| DemoRow::new(k, &self.states[k], self.inputs[k], self.converged[k]))
            .collect()
    }

    pub fn save(&self, csv: &Path, config_hash: &str) -> Result<()> {
        io::write_csv(csv, &self.rows())?;
        let f = self.final_state();
        io::write_json(
            &sidecar_path(csv),
            &Sidecar {
                kind: "trajectory".into(),
                mode: match self.domain {
                    Domain::Nominal => "nominal".into(),
                    Domain::Target => "target".into(),
                },
                seed: self.seed,
                config_hash: config_hash.into(),
                rows: self.len(),
                trajectories: 1,
                final_state: Some([f[0], f[1], f[2], f[3]]),
            },
        )
    }

    pub fn load(csv: &Path) -> Result<(Self, Sidecar)> {
        let rows: Vec<DemoRow> = io::read_csv(csv)?;
        let side: Sidecar = io::read_json(&sidecar_path(csv))?;
        let final_state = side.final_state.ok_or_else(|| {
            Error::InvalidConfig(format!("{} lacks a final state", csv.display()))
        })?;
        let mut states: Vec<State> = rows.iter().map(DemoRow::state).collect();
        states.push(State::from(final_state));
        let traj = Trajectory {
            states,
            inputs: rows.iter().map(|r| r.u).collect(),
            converged: rows.iter().map(|r| r.converged).collect(),
            iterations: vec![0; rows.len()],
            domain: if side.mode == "target" {
                Domain::Target
            } else {
                Domain::Nominal
            },
            seed: side.seed,
        };
        Ok((traj, side))
    }
}

/// Rolls the nominal model forward under the receding-horizon MPC input.
/// Any non-converged solve aborts with the step index and the partial run.
pub fn collect_nominal_demo(x0: &State, steps: usize, cfg: &MpcConfig) -> Result<Trajectory> {
    let mut solver = MpcSolver::new(*cfg)?;
    let mut traj = Trajectory {
        states: vec![*x0],
        inputs: Vec::with_capacity(steps),
        converged: Vec::with_capacity(steps),
        iterations: Vec::with_capacity(steps),
        domain: Domain::Nominal,
        seed: 0,
    };
    let mut warm: Option<MpcSolution> = None;
    let mut x = *x0;
    for k in 0..steps {
        let sol = solver.solve(&x, warm.as_ref())?;
        if !sol.converged {
            return Err(Error::DemoAborted {
                step: k,
                reason: format!(
                    "violation {:.2e}, stationarity {:.2e}",
                    sol.max_violation, sol.stationarity
                ),
                partial: Box::new(traj),
            });
        }
        let u = sol.first_input();
        x = rk4(&x, u, &cfg.params, cfg.dt);
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("nominal demonstration state"));
        }
        traj.inputs.push(u);
        traj.converged.push(true);
        traj.iterations.push(sol.iterations);
        traj.states.push(x);
        warm = Some(sol);
    }
    Ok(traj)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DatasetKind {
    Nominal,
    DrConventional,
    DrTube,
}

impl DatasetKind {
    pub fn as_str(self) -> &'static str {
        match self {
            DatasetKind::Nominal => "nominal",
            DatasetKind::DrConventional => "dr-conventional",
            DatasetKind::DrTube => "dr-tube",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DrMode {
    Conventional,
    Tube,
}

/// Box-shaped error tube: `|e_i| <= half_widths[i]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tube {
    pub half_widths: [f64; 4],
}

impl Tube {
    /// The 16 vertices followed by the 8 face centers.
    pub fn sparse_sites(&self) -> Vec<State> {
        let h = self.half_widths;
        let mut sites = Vec::with_capacity(24);
        for mask in 0..16u32 {
            let sign = |i: u32| if mask & (1 << i) == 0 { -1.0 } else { 1.0 };
            sites.push(state(
                sign(0) * h[0],
                sign(1) * h[1],
                sign(2) * h[2],
                sign(3) * h[3],
            ));
        }
        for i in 0..4 {
            for s in [-1.0, 1.0] {
                let mut e = State::zeros();
                e[i] = s * h[i];
                sites.push(e);
            }
        }
        sites
    }

    pub fn contains(&self, e: &State) -> bool {
        e.iter().zip(&self.half_widths).all(|(v, h)| v.abs() <= *h)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub inputs: Vec<State>,
    pub labels: Vec<f64>,
    /// Offset from the nominal point each sample was drawn around.
    pub offsets: Vec<State>,
    /// Nominal time index of each sample.
    pub steps: Vec<usize>,
    pub kind: DatasetKind,
    pub trajectories: usize,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// The demonstration itself: states and MPC inputs, nothing perturbed.
    pub fn nominal(traj: &Trajectory) -> Self {
        let n = traj.len();
        Dataset {
            inputs: traj.states[..n].to_vec(),
            labels: traj.inputs.clone(),
            offsets: vec![State::zeros(); n],
            steps: (0..n).collect(),
            kind: DatasetKind::Nominal,
            trajectories: 1,
        }
    }

    pub fn training_pairs(&self) -> (Vec<Vec<f64>>, Vec<f64>) {
        (
            self.inputs.iter().map(|s| s.as_slice().to_vec()).collect(),
            self.labels.clone(),
        )
    }

    pub fn save(&self, csv: &Path, seed: u64, config_hash: &str) -> Result<()> {
        let rows: Vec<DemoRow> = (0..self.len())
            .map(|i| DemoRow::new(self.steps[i], &self.inputs[i], self.labels[i], true))
            .collect();
        io::write_csv(csv, &rows)?;
        io::write_json(
            &sidecar_path(csv),
            &Sidecar {
                kind: "dataset".into(),
                mode: self.kind.as_str().into(),
                seed,
                config_hash: config_hash.into(),
                rows: self.len(),
                trajectories: self.trajectories,
                final_state: None,
            },
        )
    }
}

/// Perturbs every nominal point `n_trajectories` times inside the tube and
/// labels it with the tube-MPC law `u_MPC(x_bar) + K e`.
pub fn make_dr_dataset(
    nominal: &Trajectory,
    n_trajectories: usize,
    mode: DrMode,
    tube: &Tube,
    gain: &AncillaryGain,
    seed: u64,
) -> Result<Dataset> {
    if nominal.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let len = nominal.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sites = tube.sparse_sites();
    let start = rng.gen_range(0..sites.len());
    let total = n_trajectories * len;
    let mut ds = Dataset {
        inputs: Vec::with_capacity(total),
        labels: Vec::with_capacity(total),
        offsets: Vec::with_capacity(total),
        steps: Vec::with_capacity(total),
        kind: match mode {
            DrMode::Conventional => DatasetKind::DrConventional,
            DrMode::Tube => DatasetKind::DrTube,
        },
        trajectories: n_trajectories,
    };
    for j in 0..n_trajectories {
        for k in 0..len {
            let e = match mode {
                DrMode::Tube => sites[(start + j * len + k) % sites.len()],
                DrMode::Conventional => {
                    let h = tube.half_widths;
                    let mut draw = |w: f64| if w > 0.0 { rng.gen_range(-w..=w) } else { 0.0 };
                    state(draw(h[0]), draw(h[1]), draw(h[2]), draw(h[3]))
                }
            };
            let x_bar = nominal.states[k];
            ds.inputs.push(x_bar + e);
            ds.labels
                .push(nominal.inputs[k] + gain.input(&(x_bar + e), &x_bar));
            ds.offsets.push(e);
            ds.steps.push(k);
        }
    }
    Ok(ds)
}

/// Component-wise max-abs tracking error `x - x_bar` of the proposed
/// controller over `n_rollouts` disturbed episodes, inflated by 10%.
pub fn estimate_tube(
    controllers: &Controllers,
    template: &SimConfig,
    n_rollouts: usize,
    seed: u64,
) -> Result<Tube> {
    let batch = sim::run_batch(template, controllers, n_rollouts, seed)?;
    let mut h = [0.0f64; 4];
    for rec in &batch.records {
        for (x, xb) in rec.actual.iter().zip(&rec.nominal) {
            for i in 0..4 {
                h[i] = h[i].max((x[i] - xb[i]).abs());
            }
        }
    }
    Ok(Tube {
        half_widths: h.map(|v| 1.1 * v),
    })
}

/// Trains one network on a dataset and packages it with its provenance.
pub fn train_dataset(ds: &Dataset, cfg: &TrainConfig, config_hash: &str) -> Result<WeightsFile> {
    let (inputs, labels) = ds.training_pairs();
    let out = mlp::train(&inputs, &labels, cfg)?;
    Ok(WeightsFile {
        final_loss: out.final_loss(),
        weights: out.weights,
        train_config: cfg.clone(),
        dataset_fingerprint: mlp::dataset_fingerprint(&inputs, &labels),
        provenance: ds.kind.as_str().into(),
        config_hash: config_hash.into(),
    })
}

#[derive(Clone, Debug)]
pub struct TrainedSet {
    pub proposed: WeightsFile,
    pub dr_conventional: WeightsFile,
    pub dr_tube: WeightsFile,
}

/// Trains the nominal network and the two domain-randomized baselines
/// concurrently.
pub fn train_all(
    nominal: &Dataset,
    conventional: &Dataset,
    tube: &Dataset,
    cfg: &TrainConfig,
    config_hash: &str,
) -> Result<TrainedSet> {
    let (proposed, (dr_conventional, dr_tube)) = rayon::join(
        || train_dataset(nominal, cfg, config_hash),
        || {
            rayon::join(
                || train_dataset(conventional, cfg, config_hash),
                || train_dataset(tube, cfg, config_hash),
            )
        },
    );
    Ok(TrainedSet {
        proposed: proposed?,
        dr_conventional: dr_conventional?,
        dr_tube: dr_tube?,
    })
}
