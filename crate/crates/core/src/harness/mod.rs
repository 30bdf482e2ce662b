//! Configuration, persistence and the experiment suite: meta-training,
//! few-shot evaluation, adaptation-step and layer-freezing sweeps, the
//! update-magnitude study and the transfer-learning baseline.

mod checkpoint;
mod config;
mod dataset;
mod experiments;
mod metrics;

pub use checkpoint::Checkpoint;
pub use config::{
    BaselineConfig, DataConfig, DataSource, EpisodeConfig, EvalConfig, EvalSplit, Precision, RunConfig, TrainConfig,
    TransferConfig,
};
pub use dataset::Benchmark;
pub use experiments::{
    initial_params, run_meta_eval, run_meta_train, run_transfer_baseline, run_update_stats, sweep_adaptation_steps,
    sweep_freeze_layers, TrainOutput, TransferStudy, UpdateStudy,
};
pub use metrics::{log_histogram, mean_std, write_table, MetricsRecord};
