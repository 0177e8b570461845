//! Run configuration: one TOML file drives every pipeline stage.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dynamics::ModelParams;
use crate::error::{Error, Result};
use crate::io;
use crate::lqr::LqrWeights;
use crate::mlp::{TrainConfig, CARTPOLE_LAYERS};
use crate::mpc::{MpcConfig, SolverSettings};
use crate::sim::{SimConfig, Variant};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MpcSection {
    pub horizon: usize,
    pub q: [f64; 4],
    pub r: f64,
    pub gamma: f64,
    pub dt: f64,
    #[serde(default)]
    pub solver: SolverSettings,
}

impl Default for MpcSection {
    fn default() -> Self {
        let m = MpcConfig::default();
        MpcSection {
            horizon: m.horizon,
            q: m.q,
            r: m.r,
            gamma: m.gamma,
            dt: m.dt,
            solver: m.solver,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub learning_rate: f64,
    #[serde(default)]
    pub final_learning_rate: Option<f64>,
    pub epochs: usize,
    pub batch_size: usize,
    pub layer_sizes: Vec<usize>,
}

impl Default for TrainSection {
    fn default() -> Self {
        TrainSection {
            learning_rate: 1e-3,
            final_learning_rate: Some(1e-5),
            epochs: 50_000,
            batch_size: 100,
            layer_sizes: CARTPOLE_LAYERS.to_vec(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimSection {
    pub steps: usize,
    pub disturbance_bound: f64,
    pub episodes: usize,
    pub x0: [f64; 4],
}

impl Default for SimSection {
    fn default() -> Self {
        SimSection {
            steps: 100,
            disturbance_bound: 5.0,
            episodes: 100,
            x0: [3.0, 0.0, 0.0, 0.0],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DrSection {
    /// Disturbed rollouts used to size the error tube.
    pub tube_rollouts: usize,
    pub conventional_trajectories: usize,
    pub tube_trajectories: usize,
    /// Trajectory counts of the RMSE-versus-data sweep.
    pub sweep: Vec<usize>,
    /// Train every baseline for the same number of optimizer steps as the
    /// nominal network, shrinking the epoch count as the dataset grows.
    #[serde(default = "yes")]
    pub equal_step_budget: bool,
}

fn yes() -> bool {
    true
}

impl Default for DrSection {
    fn default() -> Self {
        DrSection {
            tube_rollouts: 100,
            conventional_trajectories: 10,
            tube_trajectories: 1,
            sweep: vec![1, 2, 5, 10],
            equal_step_budget: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub name: String,
    pub seed: u64,
    /// Relative paths resolve against the config file's directory.
    pub artifact_dir: PathBuf,
    /// Parameters of the nominal model.
    pub model: ModelParams,
    /// Parameters of the plant in the parameter-change experiments.
    pub plant: ModelParams,
    pub mpc: MpcSection,
    pub lqr: LqrWeights,
    pub train: TrainSection,
    pub sim: SimSection,
    pub dr: DrSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            name: "cartpole".into(),
            seed: 0,
            artifact_dir: PathBuf::from("artifacts"),
            model: ModelParams::NOMINAL,
            plant: ModelParams::NOMINAL.with_masses(6.0, 0.5),
            mpc: MpcSection::default(),
            lqr: LqrWeights::default(),
            train: TrainSection::default(),
            sim: SimSection::default(),
            dr: DrSection::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Loads a config file; a relative artifact directory is anchored at the
    /// file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            Error::InvalidConfig(format!("cannot read config {}: {e}", path.display()))
        })?;
        let mut cfg = Self::from_toml(&text)?;
        if cfg.artifact_dir.is_relative() {
            if let Some(dir) = path.parent() {
                cfg.artifact_dir = dir.join(&cfg.artifact_dir);
            }
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config is always representable in TOML")
    }

    pub fn validate(&self) -> Result<()> {
        self.mpc_config().validate()?;
        self.plant.validate()?;
        self.train_config().validate()?;
        if self.lqr.r <= 0.0 || self.lqr.q.iter().any(|q| *q < 0.0) {
            return Err(Error::InvalidConfig(
                "LQR weights must be non-negative with r > 0".into(),
            ));
        }
        self.sim_config(Variant::Proposed, self.model).validate()?;
        if self.sim.episodes == 0 || self.dr.tube_rollouts == 0 {
            return Err(Error::InvalidConfig(
                "episode counts must be positive".into(),
            ));
        }
        Ok(())
    }

    /// SHA-256 over the canonical JSON form, excluding the artifact location.
    pub fn hash(&self) -> String {
        let canonical = RunConfig {
            artifact_dir: PathBuf::new(),
            ..self.clone()
        };
        io::sha256_hex(&serde_json::to_vec(&canonical).expect("config serializes"))
    }

    pub fn mpc_config(&self) -> MpcConfig {
        MpcConfig {
            horizon: self.mpc.horizon,
            q: self.mpc.q,
            r: self.mpc.r,
            gamma: self.mpc.gamma,
            params: self.model,
            dt: self.mpc.dt,
            solver: self.mpc.solver,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            learning_rate: self.train.learning_rate,
            final_learning_rate: self.train.final_learning_rate,
            epochs: self.train.epochs,
            batch_size: self.train.batch_size,
            seed: self.seed,
            layer_sizes: self.train.layer_sizes.clone(),
        }
    }

    /// Training setup for a baseline dataset of `samples` pairs.
    pub fn dr_train_config(&self, samples: usize) -> TrainConfig {
        let mut t = self.train_config();
        if self.dr.equal_step_budget {
            let per_epoch = |n: usize| n.div_ceil(t.batch_size).max(1);
            let steps = t.epochs * per_epoch(self.sim.steps);
            t.epochs = steps.div_ceil(per_epoch(samples)).max(1);
        }
        t
    }

    pub fn sim_config(&self, variant: Variant, plant: ModelParams) -> SimConfig {
        SimConfig {
            variant,
            steps: self.sim.steps,
            disturbance_bound: self.sim.disturbance_bound,
            plant,
            model: self.model,
            seed: self.seed,
            dt: self.mpc.dt,
            x0: self.sim.x0,
        }
    }
}
