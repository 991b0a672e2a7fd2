//! Desk-scale separation experiments: synthetic mixtures, a tiny mask-predicting
//! separator, training with any seploss loss, and loss-as-metric benchmarking.

pub mod bench;
pub mod data;
pub mod evaluate;
pub mod model;
pub mod objective;
pub mod synth;
pub mod train;

pub use bench::{run_bench, BenchConfig, BenchResult, RunResult, Splits, UNTRAINED};
pub use data::{Dataset, Item};
pub use evaluate::{evaluate, separate, Masker};
pub use model::{MaskModel, ModelConfig};
pub use objective::{LossParams, Objective};
pub use synth::{synthesize, SourceRecipe, SynthSpec};
pub use train::{default_learning_rate, train, write_trace_csv, EpochRecord, PlateauScheduler, TrainConfig, TrainOutcome};

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error(transparent)]
    Core(#[from] seploss::Error),

    #[error("training diverged at epoch {epoch}")]
    Diverged { epoch: usize, trace: Vec<train::EpochRecord> },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("io: {0}")]
    Io(String),
}
