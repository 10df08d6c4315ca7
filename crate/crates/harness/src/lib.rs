//! Config-driven training and evaluation of continuous-depth models on
//! small synthetic tasks.

pub mod config;
pub mod data;
pub mod experiment;

pub use config::ExperimentConfig;
pub use experiment::{evaluate, train, MetricsReport, TrainOptions};

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("invalid config: {0}")]
    Config(String),

    #[error("invalid checkpoint: {0}")]
    Checkpoint(String),

    #[error("numerical failure at step {step}: {reason}")]
    Numerical { step: usize, reason: String },

    #[error(transparent)]
    Model(#[from] neurode::Error),

    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
}

impl HarnessError {
    /// Process exit status: 2 for bad input, 3 for numerical failure, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        use neurode::Error as E;
        match self {
            HarnessError::Config(_) | HarnessError::Checkpoint(_) => 2,
            HarnessError::Numerical { .. } => 3,
            HarnessError::Model(e) if e.is_numerical() => 3,
            HarnessError::Model(
                E::Checkpoint(_)
                | E::InvalidArgument(_)
                | E::Unsupported(_)
                | E::ShapeMismatch { .. }
                | E::DivergenceTooWide { .. }
                | E::Layer { .. },
            ) => 2,
            HarnessError::Model(_) | HarnessError::Io { .. } => 1,
        }
    }
}
