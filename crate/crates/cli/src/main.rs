//! `tubeil`: seeded, config-driven batch front end.
//!
//! Exit codes: 0 success, 1 usage/config/I-O error, 2 numerical failure.

mod artifacts;
mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use tubeil::config::RunConfig;
use tubeil::pipeline::Pipeline;
use tubeil::{Error, Variant};

use artifacts::Artifacts;

/// Overrides the artifact root from the config file (`--out` wins over both).
pub const ARTIFACT_ENV: &str = "TUBEIL_ARTIFACT_DIR";

#[derive(Parser, Debug)]
#[command(
    name = "tubeil",
    version,
    about = "Imitation of tube MPC with a parameter governor"
)]
struct Cli {
    /// TOML run configuration; built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config's global seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Output directory (artifact root; for `evaluate`, where reports go).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum TrainTarget {
    All,
    Proposed,
    DrConventional,
    DrTube,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum PlantChoice {
    /// Plant parameters equal to the nominal model.
    Model,
    /// The configured parameter-changed plant.
    Target,
}

impl PlantChoice {
    pub fn as_str(self) -> &'static str {
        match self {
            PlantChoice::Model => "model",
            PlantChoice::Target => "target",
        }
    }
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Collect the nominal MPC demonstration.
    Demo,
    /// Train the nominal network and/or the domain-randomized baselines.
    Train {
        #[arg(long, value_enum, default_value = "all")]
        variant: TrainTarget,
    },
    /// Run seeded disturbed episodes of one variant.
    Simulate {
        #[arg(long)]
        variant: Variant,
        #[arg(long)]
        episodes: Option<usize>,
        /// Refine the proposed controller's output with the parameter governor.
        #[arg(long, overrides_with = "no_governor")]
        governor: bool,
        #[arg(long, overrides_with = "governor")]
        no_governor: bool,
        #[arg(long, value_enum, default_value = "model")]
        plant: PlantChoice,
    },
    /// Summarize a directory of simulation runs.
    Evaluate {
        /// Directory holding run subdirectories (default: <root>/runs).
        dir: Option<PathBuf>,
    },
    /// RMSE versus number of demonstration trajectories.
    Sweep {
        #[arg(long)]
        episodes: Option<usize>,
    },
}

fn load_config(cli: &Cli) -> Result<RunConfig, Error> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Ok(dir) = std::env::var(ARTIFACT_ENV) {
        if !dir.is_empty() {
            cfg.artifact_dir = PathBuf::from(dir);
        }
    }
    if let Some(out) = &cli.out {
        cfg.artifact_dir = out.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<(), Error> {
    if let Some(j) = cli.jobs {
        if j == 0 {
            return Err(Error::InvalidConfig("--jobs must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(j)
            .build_global()
            .map_err(|e| Error::InvalidConfig(e.to_string()))?;
    }
    let cfg = load_config(&cli)?;
    let root = cfg.artifact_dir.clone();
    let art = Artifacts::new(Pipeline::new(cfg), root);
    match cli.cmd {
        Command::Demo => commands::demo(&art),
        Command::Train { variant } => commands::train(&art, variant),
        Command::Simulate {
            variant,
            episodes,
            governor,
            no_governor,
            plant,
        } => {
            let governor = match (governor, no_governor) {
                (true, _) => Some(true),
                (_, true) => Some(false),
                _ => None,
            };
            commands::simulate(&art, variant, episodes, governor, plant)
        }
        Command::Evaluate { dir } => {
            let dir = dir.unwrap_or_else(|| art.path("runs"));
            let out = cli.out.unwrap_or_else(|| dir.join("evaluation"));
            commands::evaluate(&dir, &out)
        }
        Command::Sweep { episodes } => commands::sweep(&art, episodes),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_numerical() { 2 } else { 1 })
        }
    }
}
