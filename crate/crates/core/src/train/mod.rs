//! Training, evaluation, checkpoints and the canned experiments.

pub mod checkpoint;
pub mod config;
pub mod experiments;
pub mod metrics;
pub mod probe;
mod trainer;

pub use checkpoint::Checkpoint;
pub use config::{TrainConfig, TrainSettings};
pub use metrics::MetricRow;
pub use trainer::{apply_input_dropout, data_dir_from_env, step_rng, EvalStats, ModelBundle, RunDir, Trainer, DATA_DIR_ENV};
