//! Artifact layout under the root directory, with hash-keyed caching: a
//! stage is recomputed only when its file is missing or was produced by a
//! different configuration.
//!
//! ```text
//! demo.csv, demo.json              nominal demonstration + sidecar
//! weights/proposed.json
//! weights/dr-<mode>-n<N>.json      domain-randomized baselines
//! tube.json                        estimated error tube
//! runs/<variant>-<plant>/          episode_<seed>.csv + summary.json
//! sweep.csv, sweep.checkpoint.json
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use tubeil::demo::{DrMode, Trajectory, Tube};
use tubeil::io;
use tubeil::pipeline::{Pipeline, Prepared};
use tubeil::{Result, WeightsFile};

/// Bumped whenever a column or key changes meaning.
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TubeFile {
    pub schema_version: u32,
    pub config_hash: String,
    pub seed: u64,
    pub tube: Tube,
}

pub struct Artifacts {
    pub pipe: Pipeline,
    pub root: PathBuf,
}

fn log(msg: &str) {
    eprintln!("[tubeil] {msg}");
}

impl Artifacts {
    pub fn new(pipe: Pipeline, root: PathBuf) -> Self {
        Artifacts { pipe, root }
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    fn seed(&self) -> u64 {
        self.pipe.cfg.seed
    }

    pub fn demo_path(&self) -> PathBuf {
        self.path("demo.csv")
    }

    pub fn write_demo(&self) -> Result<Trajectory> {
        log("collecting nominal demonstration");
        let demo = self.pipe.demo()?;
        demo.save(&self.demo_path(), &self.pipe.hash)?;
        Ok(demo)
    }

    pub fn demo(&self) -> Result<Trajectory> {
        if let Ok((demo, side)) = Trajectory::load(&self.demo_path()) {
            if side.config_hash == self.pipe.hash {
                return Ok(demo);
            }
        }
        self.write_demo()
    }

    fn cached_weights(&self, path: &Path) -> Option<WeightsFile> {
        WeightsFile::load(path)
            .ok()
            .filter(|w| w.config_hash == self.pipe.hash)
    }

    pub fn proposed_path(&self) -> PathBuf {
        self.path("weights/proposed.json")
    }

    pub fn proposed(&self, demo: &Trajectory) -> Result<WeightsFile> {
        let path = self.proposed_path();
        if let Some(w) = self.cached_weights(&path) {
            return Ok(w);
        }
        log("training the nominal network");
        let w = self.pipe.train_proposed(demo)?;
        w.save(&path)?;
        Ok(w)
    }

    pub fn prepared(&self) -> Result<Prepared> {
        let demo = self.demo()?;
        let proposed = self.proposed(&demo)?;
        let shadow_reference = self.pipe.shadow_reference(&proposed.weights)?;
        Ok(Prepared {
            gain: self.pipe.gain()?,
            demo,
            proposed,
            shadow_reference,
        })
    }

    pub fn tube(&self, prep: &Prepared) -> Result<Tube> {
        let path = self.path("tube.json");
        if let Ok(f) = io::read_json::<TubeFile>(&path) {
            if f.config_hash == self.pipe.hash {
                return Ok(f.tube);
            }
        }
        log("estimating the error tube");
        let tube = self.pipe.estimate_tube(prep)?;
        io::write_json(
            &path,
            &TubeFile {
                schema_version: SCHEMA_VERSION,
                config_hash: self.pipe.hash.clone(),
                seed: self.seed(),
                tube,
            },
        )?;
        Ok(tube)
    }

    pub fn dr_path(&self, mode: DrMode, trajectories: usize) -> PathBuf {
        let m = match mode {
            DrMode::Conventional => "conventional",
            DrMode::Tube => "tube",
        };
        self.path(&format!("weights/dr-{m}-n{trajectories}.json"))
    }

    pub fn dr(
        &self,
        prep: &Prepared,
        tube: &Tube,
        mode: DrMode,
        trajectories: usize,
    ) -> Result<WeightsFile> {
        let path = self.dr_path(mode, trajectories);
        if let Some(w) = self.cached_weights(&path) {
            return Ok(w);
        }
        log(&format!(
            "training {mode:?} baseline on {trajectories} trajectories"
        ));
        let w = self.pipe.train_dr(prep, tube, mode, trajectories)?.weights;
        w.save(&path)?;
        Ok(w)
    }
}
