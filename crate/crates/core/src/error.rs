use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("DARE did not converge after {0} iterations")]
    DareNotConverged(usize),
    #[error("MPC solve failed at step {step}: {reason}")]
    SolverFailed { step: usize, reason: String },
    #[error("demonstration aborted at step {step}: {reason}")]
    DemoAborted {
        step: usize,
        reason: String,
        partial: Box<crate::demo::Trajectory>,
    },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("training diverged at epoch {0}")]
    TrainingDiverged(usize),
    #[error("governor singular: pivot {pivot:e}")]
    GovernorSingular { pivot: f64 },
    #[error("episode diverged at step {0}")]
    Diverged(usize),
    #[error("missing channel: {0}")]
    MissingChannel(&'static str),
    #[error("empty dataset")]
    EmptyDataset,
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("config parse error: {0}")]
    Toml(#[from] toml::de::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// True for failures of the numerics (solver, training, simulation) as
    /// opposed to bad input, configuration or I/O.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NonFinite(_)
                | Error::DareNotConverged(_)
                | Error::SolverFailed { .. }
                | Error::DemoAborted { .. }
                | Error::TrainingDiverged(_)
                | Error::GovernorSingular { .. }
                | Error::Diverged(_)
        )
    }
}
