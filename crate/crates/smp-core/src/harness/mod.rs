//! Training, evaluation, verification and micro-benchmarks behind the CLI.

mod bench;
mod config;
mod model;
pub mod train;
pub mod verify;

pub use bench::{bench_layers, fitted_exponent, write_bench_csv, BenchRow};
pub use config::RunConfig;
pub use model::{Backbone, Model, ModelKind, ModelSpec, NodeHead, Outputs};
pub use train::{evaluate_checkpoint, train, MetricsReport, TargetStats, TrainOutcome};
pub use verify::{run_suite, CheckResult, Suite};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config error: {0}")]
    Config(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("loss became non-finite at epoch {epoch}, step {step}")]
    NanLoss { epoch: usize, step: usize },
    #[error(transparent)]
    Data(#[from] crate::datasets::DataError),
    #[error(transparent)]
    Tensor(#[from] crate::tensor::TensorError),
    #[error(transparent)]
    CheckpointIo(#[from] crate::tensor::CheckpointError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl HarnessError {
    /// Process exit code: 2 for usage/config problems, 1 for failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) => 2,
            _ => 1,
        }
    }
}
