//! Imitation learning of nonlinear MPC for the cart-pole: a network trained
//! only on nominal-model demonstrations acts as the nominal controller of a
//! tube MPC, an LQR ancillary law absorbs the sim-to-real gap, and a
//! parameter governor rescales the input when plant masses change.

pub mod config;
pub mod demo;
pub mod dynamics;
pub mod error;
pub mod governor;
pub mod io;
pub mod lqr;
pub mod metrics;
pub mod mlp;
pub mod mpc;
pub mod pipeline;
pub mod sim;

pub use demo::{Dataset, DatasetKind, DrMode, Trajectory, Tube};
pub use dynamics::{state, LinearizedModel, ModelParams, State};
pub use error::{Error, Result};
pub use governor::{GovernorMethod, GovernorResult};
pub use lqr::{AncillaryGain, LqrWeights};
pub use metrics::{RmseReport, Stats, TighteningReport};
pub use mlp::{MlpWeights, TrainConfig, WeightsFile};
pub use mpc::{MpcConfig, MpcSolution, SolverSettings};
pub use sim::{BatchSummary, Controllers, EpisodeRecord, SimConfig, Variant};
