//! End-to-end experiment stages built from a [`RunConfig`]. Every stage is
//! deterministic given the config.

use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::demo::{self, Dataset, DrMode, Trajectory, Tube};
use crate::dynamics::ModelParams;
use crate::error::{Error, Result};
use crate::lqr::{origin_gain, AncillaryGain};
use crate::metrics::{self, Stats};
use crate::mlp::{MlpWeights, WeightsFile};
use crate::sim::{self, Batch, Controllers, Variant};

/// Seed offsets keep the tube-sizing rollouts and dataset draws disjoint
/// from the evaluation episodes.
const TUBE_SEED_OFFSET: u64 = 1_000_000;
const DATASET_SEED_OFFSET: u64 = 2_000_000;

#[derive(Clone, Debug)]
pub struct Pipeline {
    pub cfg: RunConfig,
    pub hash: String,
}

/// Everything the evaluation stages need, built once.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub demo: Trajectory,
    pub gain: AncillaryGain,
    pub proposed: WeightsFile,
    /// `u_MPC` along the proposed network's nominal rollout.
    pub shadow_reference: Vec<f64>,
}

/// One point of the RMSE-versus-data sweep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub trajectories: usize,
    pub variant: Variant,
    pub episodes: usize,
    pub diverged: usize,
    pub rmse_mean: f64,
    pub rmse_min: f64,
    pub rmse_max: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DrNetwork {
    pub mode: DrMode,
    pub trajectories: usize,
    pub weights: WeightsFile,
}

impl Pipeline {
    pub fn new(cfg: RunConfig) -> Self {
        let hash = cfg.hash();
        Pipeline { cfg, hash }
    }

    pub fn demo(&self) -> Result<Trajectory> {
        let mut t = demo::collect_nominal_demo(
            &self
                .cfg
                .sim_config(Variant::Proposed, self.cfg.model)
                .initial_state(),
            self.cfg.sim.steps,
            &self.cfg.mpc_config(),
        )?;
        t.seed = self.cfg.seed;
        Ok(t)
    }

    pub fn gain(&self) -> Result<AncillaryGain> {
        origin_gain(&self.cfg.model, self.cfg.mpc.dt, &self.cfg.lqr)
    }

    pub fn train_proposed(&self, demo: &Trajectory) -> Result<WeightsFile> {
        demo::train_dataset(
            &Dataset::nominal(demo),
            &self.cfg.train_config(),
            &self.hash,
        )
    }

    pub fn shadow_reference(&self, weights: &MlpWeights) -> Result<Vec<f64>> {
        let x0 = self
            .cfg
            .sim_config(Variant::Proposed, self.cfg.model)
            .initial_state();
        sim::shadow_reference(weights, &self.cfg.mpc_config(), &x0, self.cfg.sim.steps)
    }

    pub fn prepare(&self) -> Result<Prepared> {
        let demo = self.demo()?;
        let gain = self.gain()?;
        let proposed = self.train_proposed(&demo)?;
        let shadow_reference = self.shadow_reference(&proposed.weights)?;
        Ok(Prepared {
            demo,
            gain,
            proposed,
            shadow_reference,
        })
    }

    /// Controllers for a variant. `policy` is ignored by the MPC variants;
    /// the proposed and no-dr variants use the nominal network.
    pub fn controllers(
        &self,
        prep: &Prepared,
        variant: Variant,
        policy: Option<&MlpWeights>,
    ) -> Controllers {
        let policy = match variant {
            Variant::Proposed | Variant::ProposedGovernor | Variant::NoDr => {
                Some(prep.proposed.weights.clone())
            }
            Variant::DrConventional | Variant::DrTube => policy.cloned(),
            Variant::RtmpcReference | Variant::MpcNominal => None,
        };
        Controllers {
            policy,
            gain: prep.gain,
            mpc: self.cfg.mpc_config(),
            reference: Some(prep.demo.clone()),
            shadow_reference: Some(prep.shadow_reference.clone()),
        }
    }

    /// Error tube of the proposed controller under the configured
    /// disturbance, nominal parameters.
    pub fn estimate_tube(&self, prep: &Prepared) -> Result<Tube> {
        let ctl = self.controllers(prep, Variant::Proposed, None);
        let template = self.cfg.sim_config(Variant::Proposed, self.cfg.model);
        demo::estimate_tube(
            &ctl,
            &template,
            self.cfg.dr.tube_rollouts,
            self.cfg.seed + TUBE_SEED_OFFSET,
        )
    }

    pub fn dr_dataset(
        &self,
        prep: &Prepared,
        tube: &Tube,
        mode: DrMode,
        trajectories: usize,
    ) -> Result<Dataset> {
        let mode_offset = match mode {
            DrMode::Conventional => 0,
            DrMode::Tube => 500_000,
        };
        let seed = self.cfg.seed + DATASET_SEED_OFFSET + mode_offset + trajectories as u64;
        demo::make_dr_dataset(&prep.demo, trajectories, mode, tube, &prep.gain, seed)
    }

    pub fn train_dr(
        &self,
        prep: &Prepared,
        tube: &Tube,
        mode: DrMode,
        trajectories: usize,
    ) -> Result<DrNetwork> {
        let ds = self.dr_dataset(prep, tube, mode, trajectories)?;
        Ok(DrNetwork {
            mode,
            trajectories,
            weights: demo::train_dataset(&ds, &self.cfg.dr_train_config(ds.len()), &self.hash)?,
        })
    }

    /// RMSE of one variant trained on `trajectories` demonstrations, on the
    /// nominal plant. Zero trajectories means the zero policy. The proposed
    /// network only ever sees the single nominal demonstration, so its rows
    /// repeat for every positive count. `dr_policy` supplies an already
    /// trained baseline; without it the baseline is trained here.
    pub fn sweep_point(
        &self,
        prep: &Prepared,
        tube: &Tube,
        variant: Variant,
        trajectories: usize,
        episodes: usize,
        dr_policy: Option<&MlpWeights>,
    ) -> Result<SweepRow> {
        let zero = MlpWeights::zeros(&self.cfg.train.layer_sizes);
        let batch = match (variant, trajectories) {
            (Variant::Proposed, 0) => {
                let mut ctl = self.controllers(prep, variant, None);
                ctl.shadow_reference = Some(self.shadow_reference(&zero)?);
                ctl.policy = Some(zero);
                sim::run_batch(
                    &self.cfg.sim_config(variant, self.cfg.model),
                    &ctl,
                    episodes,
                    self.cfg.seed,
                )?
            }
            (Variant::Proposed, _) => self.run(prep, variant, None, self.cfg.model, episodes)?,
            (Variant::DrConventional | Variant::DrTube, 0) => {
                self.run(prep, variant, Some(&zero), self.cfg.model, episodes)?
            }
            (Variant::DrConventional | Variant::DrTube, _) if dr_policy.is_some() => {
                self.run(prep, variant, dr_policy, self.cfg.model, episodes)?
            }
            (Variant::DrConventional | Variant::DrTube, n) => {
                let mode = if variant == Variant::DrTube {
                    DrMode::Tube
                } else {
                    DrMode::Conventional
                };
                let net = self.train_dr(prep, tube, mode, n)?;
                self.run(
                    prep,
                    variant,
                    Some(&net.weights.weights),
                    self.cfg.model,
                    episodes,
                )?
            }
            _ => {
                return Err(Error::InvalidConfig(format!(
                    "variant {variant} has no data sweep"
                )))
            }
        };
        let rmse = batch
            .records
            .iter()
            .map(metrics::rmse_vs_original)
            .collect::<Result<Vec<_>>>()?;
        let stats = Stats::of(&rmse).unwrap_or(Stats {
            mean: f64::NAN,
            min: f64::NAN,
            max: f64::NAN,
            count: 0,
        });
        Ok(SweepRow {
            trajectories,
            variant,
            episodes,
            diverged: batch.summary.diverged.len(),
            rmse_mean: stats.mean,
            rmse_min: stats.min,
            rmse_max: stats.max,
        })
    }

    /// `episodes` paired-seed runs starting at the config seed.
    pub fn run(
        &self,
        prep: &Prepared,
        variant: Variant,
        policy: Option<&MlpWeights>,
        plant: ModelParams,
        episodes: usize,
    ) -> Result<Batch> {
        let ctl = self.controllers(prep, variant, policy);
        let template = self.cfg.sim_config(variant, plant);
        sim::run_batch(&template, &ctl, episodes, self.cfg.seed)
    }
}
