//! Closed-loop episodes for every controller variant, in the nominal and
//! the target domain.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::demo::Trajectory;
use crate::dynamics::{friction_usage, rk4, ModelParams, State};
use crate::error::{Error, Result};
use crate::governor;
use crate::lqr::AncillaryGain;
use crate::metrics::{self, Stats};
use crate::mlp::MlpWeights;
use crate::mpc::{MpcConfig, MpcSolution, MpcSolver};

/// Norm beyond which an episode counts as diverged.
pub const DIVERGENCE_NORM: f64 = 1e3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Variant {
    #[serde(rename = "proposed")]
    Proposed,
    #[serde(rename = "proposed+governor")]
    ProposedGovernor,
    #[serde(rename = "dr-conventional")]
    DrConventional,
    #[serde(rename = "dr-tube")]
    DrTube,
    #[serde(rename = "no-dr")]
    NoDr,
    #[serde(rename = "rtmpc-reference")]
    RtmpcReference,
    #[serde(rename = "mpc-nominal")]
    MpcNominal,
}

impl Variant {
    pub const ALL: [Variant; 7] = [
        Variant::Proposed,
        Variant::ProposedGovernor,
        Variant::DrConventional,
        Variant::DrTube,
        Variant::NoDr,
        Variant::RtmpcReference,
        Variant::MpcNominal,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Proposed => "proposed",
            Variant::ProposedGovernor => "proposed+governor",
            Variant::DrConventional => "dr-conventional",
            Variant::DrTube => "dr-tube",
            Variant::NoDr => "no-dr",
            Variant::RtmpcReference => "rtmpc-reference",
            Variant::MpcNominal => "mpc-nominal",
        }
    }

    pub fn governed(self) -> bool {
        self == Variant::ProposedGovernor
    }

    /// Variants whose network is fed the nominal (shadow) state.
    pub fn is_proposed(self) -> bool {
        matches!(self, Variant::Proposed | Variant::ProposedGovernor)
    }

    /// Variants in which a network alone drives the plant from the actual state.
    pub fn is_direct_policy(self) -> bool {
        matches!(
            self,
            Variant::DrConventional | Variant::DrTube | Variant::NoDr
        )
    }

    pub fn with_governor(self, on: bool) -> Variant {
        match (self, on) {
            (Variant::Proposed, true) => Variant::ProposedGovernor,
            (Variant::ProposedGovernor, false) => Variant::Proposed,
            (v, _) => v,
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown variant '{s}'")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub variant: Variant,
    pub steps: usize,
    /// `d ~ U[-bound, bound]`, drawn once per control step.
    pub disturbance_bound: f64,
    pub plant: ModelParams,
    pub model: ModelParams,
    pub seed: u64,
    pub dt: f64,
    pub x0: [f64; 4],
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            variant: Variant::Proposed,
            steps: 100,
            disturbance_bound: 5.0,
            plant: ModelParams::NOMINAL,
            model: ModelParams::NOMINAL,
            seed: 0,
            dt: 0.05,
            x0: [3.0, 0.0, 0.0, 0.0],
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        self.plant.validate()?;
        self.model.validate()?;
        if self.steps == 0 || !(self.disturbance_bound >= 0.0) || !(self.dt > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "invalid simulation config {self:?}"
            )));
        }
        Ok(())
    }

    pub fn initial_state(&self) -> State {
        State::from(self.x0)
    }
}

/// Everything an episode needs besides its configuration. Shared read-only
/// across workers.
#[derive(Clone, Debug)]
pub struct Controllers {
    pub policy: Option<MlpWeights>,
    pub gain: AncillaryGain,
    pub mpc: MpcConfig,
    /// Tube-MPC nominal trajectory from the episode's initial state (the
    /// demonstration); the baselines are judged against `u_MPC + K e` on it.
    pub reference: Option<Trajectory>,
    /// `u_MPC` evaluated along the policy's own nominal rollout.
    pub shadow_reference: Option<Vec<f64>>,
}

impl Controllers {
    fn policy(&self) -> Result<&MlpWeights> {
        self.policy
            .as_ref()
            .ok_or(Error::MissingChannel("policy weights"))
    }

    fn reference(&self, steps: usize) -> Result<&Trajectory> {
        match &self.reference {
            Some(t) if t.len() >= steps => Ok(t),
            Some(_) => Err(Error::Shape(
                "reference trajectory shorter than the episode".into(),
            )),
            None => Err(Error::MissingChannel("reference trajectory")),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeRecord {
    pub variant: Variant,
    pub seed: u64,
    /// `steps + 1` plant states.
    pub actual: Vec<State>,
    /// `steps + 1` nominal states (own shadow, or the reference trajectory).
    pub nominal: Vec<State>,
    /// Network output; for the MPC variants, the MPC's own input.
    pub dnn: Vec<f64>,
    /// Input that drove the nominal state.
    pub nominal_input: Vec<f64>,
    pub ancillary: Vec<f64>,
    /// Controller output before the governor.
    pub controller: Vec<f64>,
    /// Controller output after the governor (equal to `controller` when off).
    pub refined: Vec<f64>,
    pub flagged: Vec<bool>,
    pub disturbance: Vec<f64>,
    /// Force on the plant: `refined + disturbance`.
    pub applied: Vec<f64>,
    /// What the original controller would have commanded at each step.
    pub reference: Option<Vec<f64>>,
    /// `g(x, refined, M)` on the plant.
    pub constraint: Vec<f64>,
}

impl EpisodeRecord {
    pub fn steps(&self) -> usize {
        self.controller.len()
    }

    pub fn final_state(&self) -> &State {
        self.actual.last().expect("record holds its initial state")
    }

    pub fn rows(&self) -> Vec<EpisodeRow> {
        (0..=self.steps())
            .map(|k| {
                let x = &self.actual[k];
                let n = &self.nominal[k];
                let at = |v: &[f64]| v.get(k).copied();
                EpisodeRow {
                    k,
                    x_pos: x[0],
                    x_vel: x[1],
                    theta: x[2],
                    theta_dot: x[3],
                    nom_x_pos: n[0],
                    nom_x_vel: n[1],
                    nom_theta: n[2],
                    nom_theta_dot: n[3],
                    dnn_input: at(&self.dnn),
                    nominal_input: at(&self.nominal_input),
                    ancillary_input: at(&self.ancillary),
                    controller_input: at(&self.controller),
                    refined_input: at(&self.refined),
                    governor_flag: self.flagged.get(k).copied(),
                    disturbance: at(&self.disturbance),
                    applied_force: at(&self.applied),
                    reference_input: self.reference.as_ref().and_then(|r| r.get(k).copied()),
                    constraint: at(&self.constraint),
                }
            })
            .collect()
    }

    /// Rebuilds a record from its CSV rows (the last row holds only states).
    pub fn from_rows(rows: &[EpisodeRow], variant: Variant, seed: u64) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let steps = rows.len() - 1;
        let body = &rows[..steps];
        let col = |f: fn(&EpisodeRow) -> Option<f64>, name: &'static str| -> Result<Vec<f64>> {
            body.iter()
                .map(|r| f(r).ok_or(Error::MissingChannel(name)))
                .collect()
        };
        let reference = if body.iter().all(|r| r.reference_input.is_some()) {
            Some(
                body.iter()
                    .map(|r| r.reference_input.unwrap_or_default())
                    .collect(),
            )
        } else {
            None
        };
        Ok(EpisodeRecord {
            variant,
            seed,
            actual: rows
                .iter()
                .map(|r| State::new(r.x_pos, r.x_vel, r.theta, r.theta_dot))
                .collect(),
            nominal: rows
                .iter()
                .map(|r| State::new(r.nom_x_pos, r.nom_x_vel, r.nom_theta, r.nom_theta_dot))
                .collect(),
            dnn: col(|r| r.dnn_input, "dnn_input")?,
            nominal_input: col(|r| r.nominal_input, "nominal_input")?,
            ancillary: col(|r| r.ancillary_input, "ancillary_input")?,
            controller: col(|r| r.controller_input, "controller_input")?,
            refined: col(|r| r.refined_input, "refined_input")?,
            flagged: body
                .iter()
                .map(|r| {
                    r.governor_flag
                        .ok_or(Error::MissingChannel("governor_flag"))
                })
                .collect::<Result<_>>()?,
            disturbance: col(|r| r.disturbance, "disturbance")?,
            applied: col(|r| r.applied_force, "applied_force")?,
            reference,
            constraint: col(|r| r.constraint, "constraint")?,
        })
    }
}

/// One CSV row of an episode file. Input columns are empty on the terminal row.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRow {
    pub k: usize,
    pub x_pos: f64,
    pub x_vel: f64,
    pub theta: f64,
    pub theta_dot: f64,
    pub nom_x_pos: f64,
    pub nom_x_vel: f64,
    pub nom_theta: f64,
    pub nom_theta_dot: f64,
    pub dnn_input: Option<f64>,
    pub nominal_input: Option<f64>,
    pub ancillary_input: Option<f64>,
    pub controller_input: Option<f64>,
    pub refined_input: Option<f64>,
    pub governor_flag: Option<bool>,
    pub disturbance: Option<f64>,
    pub applied_force: Option<f64>,
    pub reference_input: Option<f64>,
    pub constraint: Option<f64>,
}

/// Nominal-model rollout of a network fed its own state.
pub fn policy_rollout(
    weights: &MlpWeights,
    model: &ModelParams,
    x0: &State,
    steps: usize,
    dt: f64,
) -> Result<(Vec<State>, Vec<f64>)> {
    let mut states = Vec::with_capacity(steps + 1);
    let mut inputs = Vec::with_capacity(steps);
    states.push(*x0);
    for k in 0..steps {
        let u = weights.predict(states[k].as_slice())?;
        inputs.push(u);
        states.push(rk4(&states[k], u, model, dt));
    }
    Ok((states, inputs))
}

/// `u_MPC` at every state of the policy's nominal rollout. The rollout is
/// disturbance-free, so this is computed once per network.
pub fn shadow_reference(
    weights: &MlpWeights,
    mpc: &MpcConfig,
    x0: &State,
    steps: usize,
) -> Result<Vec<f64>> {
    let (states, _) = policy_rollout(weights, &mpc.params, x0, steps, mpc.dt)?;
    mpc_along(&states[..steps], mpc)
}

/// Warm-started MPC solves along a fixed state sequence.
pub fn mpc_along(states: &[State], mpc: &MpcConfig) -> Result<Vec<f64>> {
    let mut solver = MpcSolver::new(*mpc)?;
    let mut warm: Option<MpcSolution> = None;
    let mut out = Vec::with_capacity(states.len());
    for x in states {
        let sol = solver.solve(x, warm.as_ref())?;
        out.push(sol.first_input());
        warm = Some(sol);
    }
    Ok(out)
}

fn diverged(x: &State) -> bool {
    x.iter().any(|v| !v.is_finite()) || x.norm() > DIVERGENCE_NORM
}

pub fn run_episode(cfg: &SimConfig, ctl: &Controllers) -> Result<EpisodeRecord> {
    cfg.validate()?;
    let n = cfg.steps;
    let x0 = cfg.initial_state();
    let variant = cfg.variant;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut rec = EpisodeRecord {
        variant,
        seed: cfg.seed,
        actual: Vec::with_capacity(n + 1),
        nominal: Vec::with_capacity(n + 1),
        dnn: Vec::with_capacity(n),
        nominal_input: Vec::with_capacity(n),
        ancillary: Vec::with_capacity(n),
        controller: Vec::with_capacity(n),
        refined: Vec::with_capacity(n),
        flagged: Vec::with_capacity(n),
        disturbance: Vec::with_capacity(n),
        applied: Vec::with_capacity(n),
        reference: None,
        constraint: Vec::with_capacity(n),
    };
    let mut reference = Vec::with_capacity(n);
    let mut solver = match variant {
        Variant::RtmpcReference | Variant::MpcNominal => Some(MpcSolver::new(ctl.mpc)?),
        _ => None,
    };
    let mut warm: Option<MpcSolution> = None;
    let ref_traj = if variant.is_direct_policy() || variant == Variant::MpcNominal {
        Some(ctl.reference(n)?)
    } else {
        None
    };
    if variant.is_proposed() {
        ctl.policy()?;
    }

    let mut x = x0;
    let mut x_bar = x0;
    for k in 0..n {
        if let Some(t) = ref_traj {
            x_bar = t.states[k];
        }
        rec.actual.push(x);
        rec.nominal.push(x_bar);

        // nominal input, network output, ancillary term, and reference
        let (u_bar, dnn, ancillary, reference_k) = match variant {
            Variant::Proposed | Variant::ProposedGovernor => {
                let u_bar = ctl.policy()?.predict(x_bar.as_slice())?;
                let reference_k = ctl
                    .shadow_reference
                    .as_ref()
                    .and_then(|r| r.get(k).copied());
                (u_bar, u_bar, ctl.gain.input(&x, &x_bar), reference_k)
            }
            Variant::DrConventional | Variant::DrTube | Variant::NoDr => {
                let t = ref_traj.expect("reference checked above");
                let dnn = ctl.policy()?.predict(x.as_slice())?;
                let reference_k = t.inputs[k] + ctl.gain.input(&x, &x_bar);
                (t.inputs[k], dnn, 0.0, Some(reference_k))
            }
            Variant::RtmpcReference => {
                let sol = solver
                    .as_mut()
                    .expect("solver built above")
                    .solve(&x_bar, warm.as_ref())?;
                let u_bar = sol.first_input();
                warm = Some(sol);
                let ancillary = ctl.gain.input(&x, &x_bar);
                (u_bar, u_bar, ancillary, Some(u_bar + ancillary))
            }
            Variant::MpcNominal => {
                let t = ref_traj.expect("reference checked above");
                let sol = solver
                    .as_mut()
                    .expect("solver built above")
                    .solve(&x, warm.as_ref())?;
                let u = sol.first_input();
                warm = Some(sol);
                (t.inputs[k], u, 0.0, Some(u))
            }
        };
        let u = if variant.is_direct_policy() || variant == Variant::MpcNominal {
            dnn
        } else {
            u_bar + ancillary
        };
        let (refined, flagged) = if variant.governed() {
            match governor::refine(u, &x, &x_bar, &cfg.plant, &cfg.model) {
                Ok(r) => (r.refined, false),
                Err(_) => (u, true),
            }
        } else {
            (u, false)
        };
        let d = if cfg.disturbance_bound > 0.0 {
            rng.gen_range(-cfg.disturbance_bound..=cfg.disturbance_bound)
        } else {
            0.0
        };
        let force = refined + d;
        // the disturbance actually realized in floating point
        let d = force - refined;

        rec.dnn.push(dnn);
        rec.nominal_input.push(u_bar);
        rec.ancillary.push(ancillary);
        rec.controller.push(u);
        rec.refined.push(refined);
        rec.flagged.push(flagged);
        rec.disturbance.push(d);
        rec.applied.push(force);
        rec.constraint.push(friction_usage(&x, refined, &cfg.plant));
        if let Some(r) = reference_k {
            reference.push(r);
        }

        x = rk4(&x, force, &cfg.plant, cfg.dt);
        if diverged(&x) {
            return Err(Error::Diverged(k));
        }
        if variant.is_proposed() || variant == Variant::RtmpcReference {
            x_bar = rk4(&x_bar, u_bar, &cfg.model, cfg.dt);
        }
    }
    if let Some(t) = ref_traj {
        x_bar = t.states[n];
    }
    rec.actual.push(x);
    rec.nominal.push(x_bar);
    if reference.len() == n {
        rec.reference = Some(reference);
    }
    Ok(rec)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DivergedEpisode {
    pub seed: u64,
    pub step: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BatchSummary {
    pub variant: Variant,
    pub episodes: usize,
    pub seed_base: u64,
    pub diverged: Vec<DivergedEpisode>,
    pub rmse: Option<Stats>,
    pub final_abs_x_pos: Option<Stats>,
    pub final_abs_theta: Option<Stats>,
    /// Per-episode `max_k |F/(mu F_z)|` on the controller output.
    pub max_friction_usage: Option<Stats>,
    /// Mean absolute one-step change of the total applied force.
    pub applied_roughness: Option<Stats>,
    /// Mean absolute one-step change of the network output.
    pub dnn_roughness: Option<Stats>,
    pub flagged_steps: usize,
}

#[derive(Clone, Debug)]
pub struct Batch {
    pub records: Vec<EpisodeRecord>,
    pub summary: BatchSummary,
}

/// Episode `i` uses seed `seed_base + i`. Results come back in seed order
/// regardless of how the work was scheduled.
pub fn run_batch(
    template: &SimConfig,
    ctl: &Controllers,
    n_episodes: usize,
    seed_base: u64,
) -> Result<Batch> {
    let results: Vec<(u64, Result<EpisodeRecord>)> = (0..n_episodes as u64)
        .into_par_iter()
        .map(|i| {
            let seed = seed_base + i;
            let cfg = SimConfig { seed, ..*template };
            (seed, run_episode(&cfg, ctl))
        })
        .collect();
    let mut records = Vec::with_capacity(n_episodes);
    let mut diverged = Vec::new();
    for (seed, r) in results {
        match r {
            Ok(rec) => records.push(rec),
            Err(Error::Diverged(step)) => diverged.push(DivergedEpisode { seed, step }),
            Err(e) => return Err(e),
        }
    }
    let summary = summarize(template.variant, n_episodes, seed_base, &records, diverged);
    Ok(Batch { records, summary })
}

pub fn summarize(
    variant: Variant,
    episodes: usize,
    seed_base: u64,
    records: &[EpisodeRecord],
    diverged: Vec<DivergedEpisode>,
) -> BatchSummary {
    let rmse: Vec<f64> = records
        .iter()
        .filter_map(|r| metrics::rmse_vs_original(r).ok())
        .collect();
    let per =
        |f: &dyn Fn(&EpisodeRecord) -> f64| Stats::of(&records.iter().map(f).collect::<Vec<_>>());
    BatchSummary {
        variant,
        episodes,
        seed_base,
        diverged,
        rmse: if rmse.len() == records.len() {
            Stats::of(&rmse)
        } else {
            None
        },
        final_abs_x_pos: per(&|r| r.final_state()[0].abs()),
        final_abs_theta: per(&|r| r.final_state()[2].abs()),
        max_friction_usage: per(&|r| r.constraint.iter().map(|g| g + 1.0).fold(0.0, f64::max)),
        applied_roughness: per(&|r| metrics::roughness(&r.applied)),
        dnn_roughness: per(&|r| metrics::roughness(&r.dnn)),
        flagged_steps: records
            .iter()
            .map(|r| r.flagged.iter().filter(|f| **f).count())
            .sum(),
    }
}
