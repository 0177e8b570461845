//! Evaluation quantities computed from episode records: imitation RMSE,
//! the constraint-tightening requirement, and realized-disturbance envelopes.

use serde::{Deserialize, Serialize};

use crate::dynamics::{rk4, ModelParams, State};
use crate::error::{Error, Result};
use crate::governor::constraint_gap_series;
use crate::sim::{EpisodeRecord, Variant};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stats {
    pub mean: f64,
    pub min: f64,
    pub max: f64,
    pub count: usize,
}

impl Stats {
    pub fn of(values: &[f64]) -> Option<Stats> {
        if values.is_empty() {
            return None;
        }
        Some(Stats {
            mean: values.iter().sum::<f64>() / values.len() as f64,
            min: values.iter().copied().fold(f64::INFINITY, f64::min),
            max: values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            count: values.len(),
        })
    }
}

/// Mean absolute one-step change of a signal.
pub fn roughness(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return 0.0;
    }
    v.windows(2).map(|w| (w[1] - w[0]).abs()).sum::<f64>() / (v.len() - 1) as f64
}

pub fn rms(v: &[f64]) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    (v.iter().map(|x| x * x).sum::<f64>() / v.len() as f64).sqrt()
}

/// RMS difference between the network output and what the original
/// controller would have commanded at the same step.
pub fn rmse_vs_original(rec: &EpisodeRecord) -> Result<f64> {
    let reference = rec
        .reference
        .as_ref()
        .ok_or(Error::MissingChannel("reference input"))?;
    if reference.len() != rec.dnn.len() {
        return Err(Error::Shape(
            "reference and network channels differ in length".into(),
        ));
    }
    let diff: Vec<f64> = rec.dnn.iter().zip(reference).map(|(a, b)| a - b).collect();
    Ok(rms(&diff))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RmseReport {
    pub variant: Variant,
    /// Number of demonstration trajectories the network was trained on.
    pub trajectories: usize,
    pub per_episode: Vec<f64>,
    pub stats: Stats,
}

pub fn rmse_report(records: &[EpisodeRecord], trajectories: usize) -> Result<RmseReport> {
    let first = records.first().ok_or(Error::EmptyDataset)?;
    let per_episode = records
        .iter()
        .map(rmse_vs_original)
        .collect::<Result<Vec<_>>>()?;
    Ok(RmseReport {
        variant: first.variant,
        trajectories,
        stats: Stats::of(&per_episode).expect("non-empty"),
        per_episode,
    })
}

/// `max_k |e_g(k)|` of one episode, using the controller's (possibly
/// refined) output on the plant against the nominal input on the model.
pub fn max_constraint_gap(
    rec: &EpisodeRecord,
    plant: &ModelParams,
    model: &ModelParams,
) -> Result<f64> {
    let gap = constraint_gap_series(
        &rec.actual,
        &rec.nominal,
        &rec.refined,
        &rec.nominal_input,
        plant,
        model,
    )?;
    Ok(gap.iter().map(|g| g.abs()).fold(0.0, f64::max))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TighteningReport {
    pub seeds: Vec<u64>,
    pub without_governor: Vec<f64>,
    pub with_governor: Vec<f64>,
    /// Batch maxima: the smallest tightening that covers every episode.
    pub implied_gamma_without: f64,
    pub implied_gamma_with: f64,
    /// Pairs in which the governed run needs strictly less tightening.
    pub pairs_improved: usize,
}

fn pair_by_seed<'a>(
    a: &'a [EpisodeRecord],
    b: &'a [EpisodeRecord],
) -> Vec<(&'a EpisodeRecord, &'a EpisodeRecord)> {
    let mut pairs: Vec<_> = a
        .iter()
        .filter_map(|ra| b.iter().find(|rb| rb.seed == ra.seed).map(|rb| (ra, rb)))
        .collect();
    pairs.sort_by_key(|(r, _)| r.seed);
    pairs
}

/// Paired comparison of the tightening requirement with and without the
/// governor. Episodes are matched by seed; unmatched ones are ignored.
pub fn required_gamma(
    without: &[EpisodeRecord],
    with: &[EpisodeRecord],
    plant: &ModelParams,
    model: &ModelParams,
) -> Result<TighteningReport> {
    let pairs = pair_by_seed(without, with);
    if pairs.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut report = TighteningReport {
        seeds: Vec::with_capacity(pairs.len()),
        without_governor: Vec::with_capacity(pairs.len()),
        with_governor: Vec::with_capacity(pairs.len()),
        implied_gamma_without: 0.0,
        implied_gamma_with: 0.0,
        pairs_improved: 0,
    };
    for (a, b) in pairs {
        let ga = max_constraint_gap(a, plant, model)?;
        let gb = max_constraint_gap(b, plant, model)?;
        report.seeds.push(a.seed);
        report.without_governor.push(ga);
        report.with_governor.push(gb);
        report.implied_gamma_without = report.implied_gamma_without.max(ga);
        report.implied_gamma_with = report.implied_gamma_with.max(gb);
        if gb < ga {
            report.pairs_improved += 1;
        }
    }
    Ok(report)
}

/// `w(k) = x(k+1) - f(x(k), u(k), M_bar)` with `u(k)` the controller's
/// command before refinement: everything the nominal model does not explain.
pub fn realized_disturbance(rec: &EpisodeRecord, model: &ModelParams, dt: f64) -> Vec<State> {
    (0..rec.steps())
        .map(|k| rec.actual[k + 1] - rk4(&rec.actual[k], rec.controller[k], model, dt))
        .collect()
}

pub fn disturbance_max_abs(
    rec: &EpisodeRecord,
    component: usize,
    model: &ModelParams,
    dt: f64,
) -> f64 {
    realized_disturbance(rec, model, dt)
        .iter()
        .map(|w| w[component].abs())
        .fold(0.0, f64::max)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvelopeReport {
    pub component: usize,
    pub seeds: Vec<u64>,
    pub without_governor: Vec<f64>,
    pub with_governor: Vec<f64>,
    /// Pairs in which the governed envelope is not larger.
    pub pairs_not_worse: usize,
}

pub fn disturbance_envelope(
    without: &[EpisodeRecord],
    with: &[EpisodeRecord],
    component: usize,
    model: &ModelParams,
    dt: f64,
) -> Result<EnvelopeReport> {
    if component >= 4 {
        return Err(Error::Shape(format!(
            "state component {component} out of range"
        )));
    }
    let pairs = pair_by_seed(without, with);
    if pairs.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut report = EnvelopeReport {
        component,
        seeds: Vec::new(),
        without_governor: Vec::new(),
        with_governor: Vec::new(),
        pairs_not_worse: 0,
    };
    for (a, b) in pairs {
        let ea = disturbance_max_abs(a, component, model, dt);
        let eb = disturbance_max_abs(b, component, model, dt);
        report.seeds.push(a.seed);
        report.without_governor.push(ea);
        report.with_governor.push(eb);
        if eb <= ea {
            report.pairs_not_worse += 1;
        }
    }
    Ok(report)
}
