use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use tubeil::demo::DrMode;
use tubeil::metrics::{self, EnvelopeReport, TighteningReport};
use tubeil::pipeline::SweepRow;
use tubeil::sim::{Batch, EpisodeRow};
use tubeil::{io, BatchSummary, EpisodeRecord, Error, ModelParams, Result, Variant};

use crate::artifacts::{Artifacts, SCHEMA_VERSION};
use crate::{PlantChoice, TrainTarget};

pub fn demo(art: &Artifacts) -> Result<()> {
    art.write_demo()?;
    println!("{}", art.demo_path().display());
    Ok(())
}

pub fn train(art: &Artifacts, target: TrainTarget) -> Result<()> {
    let demo = art.demo()?;
    let proposed = art.proposed(&demo)?;
    println!("{}", art.proposed_path().display());
    if target == TrainTarget::Proposed {
        return Ok(());
    }
    let prep = art.prepared()?;
    debug_assert_eq!(prep.proposed, proposed);
    let tube = art.tube(&prep)?;
    let dr = &art.pipe.cfg.dr;
    let modes: &[(DrMode, usize)] = match target {
        TrainTarget::DrConventional => &[(DrMode::Conventional, dr.conventional_trajectories)],
        TrainTarget::DrTube => &[(DrMode::Tube, dr.tube_trajectories)],
        _ => &[
            (DrMode::Conventional, dr.conventional_trajectories),
            (DrMode::Tube, dr.tube_trajectories),
        ],
    };
    for &(mode, n) in modes {
        art.dr(&prep, &tube, mode, n)?;
        println!("{}", art.dr_path(mode, n).display());
    }
    Ok(())
}

/// Per-run manifest: what was run, the summary, and a digest of every
/// episode file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub schema_version: u32,
    pub config_hash: String,
    pub seed: u64,
    pub variant: Variant,
    pub plant: String,
    pub plant_params: ModelParams,
    pub model_params: ModelParams,
    pub dt: f64,
    /// Demonstration trajectories behind the policy (0 for online MPC).
    pub trajectories: usize,
    pub episodes: Vec<EpisodeEntry>,
    pub summary: BatchSummary,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeEntry {
    pub seed: u64,
    pub file: String,
    pub sha256: String,
}

fn run_dir_name(variant: Variant, plant: PlantChoice) -> String {
    format!("{}-{}", variant.as_str().replace('+', "-"), plant.as_str())
}

pub fn simulate(
    art: &Artifacts,
    variant: Variant,
    episodes: Option<usize>,
    governor: Option<bool>,
    plant: PlantChoice,
) -> Result<()> {
    let variant = match governor {
        Some(on) if variant.is_proposed() => variant.with_governor(on),
        Some(true) => {
            return Err(Error::InvalidConfig(format!(
                "--governor applies only to the proposed variant, not {variant}"
            )))
        }
        _ => variant,
    };
    let cfg = &art.pipe.cfg;
    let episodes = episodes.unwrap_or(cfg.sim.episodes);
    if episodes == 0 {
        return Err(Error::InvalidConfig("--episodes must be positive".into()));
    }
    let plant_params = match plant {
        PlantChoice::Model => cfg.model,
        PlantChoice::Target => cfg.plant,
    };
    let prep = art.prepared()?;
    let (policy, trajectories) = match variant {
        Variant::DrConventional | Variant::DrTube => {
            let tube = art.tube(&prep)?;
            let (mode, n) = if variant == Variant::DrTube {
                (DrMode::Tube, cfg.dr.tube_trajectories)
            } else {
                (DrMode::Conventional, cfg.dr.conventional_trajectories)
            };
            (Some(art.dr(&prep, &tube, mode, n)?.weights), n)
        }
        Variant::RtmpcReference | Variant::MpcNominal => (None, 0),
        _ => (None, 1),
    };
    eprintln!(
        "[tubeil] simulating {episodes} episodes of {variant} on the {} plant",
        plant.as_str()
    );
    let batch: Batch = art
        .pipe
        .run(&prep, variant, policy.as_ref(), plant_params, episodes)?;

    let dir = art.path("runs").join(run_dir_name(variant, plant));
    std::fs::create_dir_all(&dir)?;
    for entry in std::fs::read_dir(&dir)? {
        let p = entry?.path();
        let name = p.file_name().and_then(|n| n.to_str()).unwrap_or("");
        if name.starts_with("episode_") && name.ends_with(".csv") {
            std::fs::remove_file(&p)?;
        }
    }
    let mut entries = Vec::with_capacity(batch.records.len());
    for rec in &batch.records {
        let file = format!("episode_{:06}.csv", rec.seed);
        let bytes = io::csv_bytes(&rec.rows())?;
        io::atomic_write(&dir.join(&file), &bytes)?;
        entries.push(EpisodeEntry {
            seed: rec.seed,
            file,
            sha256: io::sha256_hex(&bytes),
        });
    }
    let manifest = RunManifest {
        schema_version: SCHEMA_VERSION,
        config_hash: art.pipe.hash.clone(),
        seed: cfg.seed,
        variant,
        plant: plant.as_str().into(),
        plant_params,
        model_params: cfg.model,
        dt: cfg.mpc.dt,
        trajectories,
        episodes: entries,
        summary: batch.summary,
    };
    let summary_path = dir.join("summary.json");
    io::write_json(&summary_path, &manifest)?;
    println!("{}", summary_path.display());
    Ok(())
}

struct LoadedRun {
    manifest: RunManifest,
    records: Vec<EpisodeRecord>,
}

fn load_runs(dir: &Path) -> Result<Vec<LoadedRun>> {
    let mut subdirs: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| {
            Error::InvalidConfig(format!(
                "cannot read results directory {}: {e}",
                dir.display()
            ))
        })?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join("summary.json").is_file())
        .collect();
    subdirs.sort();
    let mut runs = Vec::with_capacity(subdirs.len());
    for sub in subdirs {
        let manifest: RunManifest = io::read_json(&sub.join("summary.json"))?;
        let records = manifest
            .episodes
            .iter()
            .map(|e| {
                let rows: Vec<EpisodeRow> = io::read_csv(&sub.join(&e.file))?;
                EpisodeRecord::from_rows(&rows, manifest.variant, e.seed)
            })
            .collect::<Result<Vec<_>>>()?;
        runs.push(LoadedRun { manifest, records });
    }
    if runs.is_empty() {
        return Err(Error::InvalidConfig(format!(
            "no simulation runs found in {}",
            dir.display()
        )));
    }
    Ok(runs)
}

/// One line of the comparison table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub variant: Variant,
    pub plant: String,
    pub trajectories: usize,
    pub episodes: usize,
    pub diverged: usize,
    pub rmse_mean: Option<f64>,
    pub rmse_min: Option<f64>,
    pub rmse_max: Option<f64>,
    pub final_abs_x_pos_mean: Option<f64>,
    pub final_abs_theta_mean: Option<f64>,
    pub max_friction_usage: Option<f64>,
    pub flagged_steps: usize,
    pub config_hash: String,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GovernorReport {
    pub schema_version: u32,
    pub config_hash: String,
    pub seed: u64,
    pub tightening: TighteningReport,
    /// Realized-disturbance envelope on the cart-velocity component.
    pub envelope: EnvelopeReport,
}

pub fn evaluate(dir: &Path, out: &Path) -> Result<()> {
    let runs = load_runs(dir)?;
    let table: Vec<TableRow> = runs
        .iter()
        .map(|r| {
            let s = &r.manifest.summary;
            TableRow {
                variant: r.manifest.variant,
                plant: r.manifest.plant.clone(),
                trajectories: r.manifest.trajectories,
                episodes: s.episodes,
                diverged: s.diverged.len(),
                rmse_mean: s.rmse.map(|x| x.mean),
                rmse_min: s.rmse.map(|x| x.min),
                rmse_max: s.rmse.map(|x| x.max),
                final_abs_x_pos_mean: s.final_abs_x_pos.map(|x| x.mean),
                final_abs_theta_mean: s.final_abs_theta.map(|x| x.mean),
                max_friction_usage: s.max_friction_usage.map(|x| x.max),
                flagged_steps: s.flagged_steps,
                config_hash: r.manifest.config_hash.clone(),
                seed: r.manifest.seed,
            }
        })
        .collect();
    io::write_csv(&out.join("table.csv"), &table)?;
    println!("{}", out.join("table.csv").display());

    let find = |v: Variant| {
        runs.iter()
            .find(|r| r.manifest.variant == v && r.manifest.plant == "target")
    };
    if let (Some(a), Some(b)) = (find(Variant::Proposed), find(Variant::ProposedGovernor)) {
        let m = &a.manifest;
        let report = GovernorReport {
            schema_version: SCHEMA_VERSION,
            config_hash: m.config_hash.clone(),
            seed: m.seed,
            tightening: metrics::required_gamma(
                &a.records,
                &b.records,
                &m.plant_params,
                &m.model_params,
            )?,
            envelope: metrics::disturbance_envelope(
                &a.records,
                &b.records,
                1,
                &m.model_params,
                m.dt,
            )?,
        };
        io::write_json(&out.join("governor.json"), &report)?;
        println!("{}", out.join("governor.json").display());
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Checkpoint {
    config_hash: String,
    episodes: usize,
    rows: Vec<SweepRow>,
}

#[derive(Serialize)]
struct SweepCsvRow<'a> {
    trajectories: usize,
    variant: Variant,
    episodes: usize,
    diverged: usize,
    rmse_mean: f64,
    rmse_min: f64,
    rmse_max: f64,
    config_hash: &'a str,
    seed: u64,
}

pub const SWEEP_VARIANTS: [Variant; 3] =
    [Variant::Proposed, Variant::DrTube, Variant::DrConventional];

pub fn sweep(art: &Artifacts, episodes: Option<usize>) -> Result<()> {
    let cfg = &art.pipe.cfg;
    let episodes = episodes.unwrap_or(cfg.sim.episodes);
    let ckpt_path = art.path("sweep.checkpoint.json");
    let mut ckpt = match io::read_json::<Checkpoint>(&ckpt_path) {
        Ok(c) if c.config_hash == art.pipe.hash && c.episodes == episodes => c,
        _ => Checkpoint {
            config_hash: art.pipe.hash.clone(),
            episodes,
            rows: Vec::new(),
        },
    };
    let prep = art.prepared()?;
    let tube = art.tube(&prep)?;
    for &n in &cfg.dr.sweep {
        for v in SWEEP_VARIANTS {
            if ckpt
                .rows
                .iter()
                .any(|r| r.trajectories == n && r.variant == v)
            {
                continue;
            }
            let policy = match v {
                Variant::DrTube if n > 0 => Some(art.dr(&prep, &tube, DrMode::Tube, n)?.weights),
                Variant::DrConventional if n > 0 => {
                    Some(art.dr(&prep, &tube, DrMode::Conventional, n)?.weights)
                }
                _ => None,
            };
            eprintln!("[tubeil] sweep point {v} n={n}");
            let row = art
                .pipe
                .sweep_point(&prep, &tube, v, n, episodes, policy.as_ref())?;
            ckpt.rows.push(row);
            io::write_json(&ckpt_path, &ckpt)?;
        }
    }
    let mut rows: Vec<&SweepRow> = ckpt
        .rows
        .iter()
        .filter(|r| cfg.dr.sweep.contains(&r.trajectories))
        .collect();
    rows.sort_by_key(|r| {
        let pos = SWEEP_VARIANTS.iter().position(|v| *v == r.variant);
        (r.trajectories, pos)
    });
    let csv: Vec<SweepCsvRow> = rows
        .into_iter()
        .map(|r| SweepCsvRow {
            trajectories: r.trajectories,
            variant: r.variant,
            episodes: r.episodes,
            diverged: r.diverged,
            rmse_mean: r.rmse_mean,
            rmse_min: r.rmse_min,
            rmse_max: r.rmse_max,
            config_hash: &art.pipe.hash,
            seed: cfg.seed,
        })
        .collect();
    let path = art.path("sweep.csv");
    io::write_csv(&path, &csv)?;
    println!("{}", path.display());
    Ok(())
}
