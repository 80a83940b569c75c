//! Experiment runner: stream, model and normalizer wired together, plus the
//! comparison tables and diagnostics built on top.

mod compare;
mod config;
mod diagnostics;
mod evaluate;
mod train;

pub use compare::{
    all_mode_configs, batch_size_sweep, compare_modes, gamma_sweep, mode_configs, ComparisonRow, ComparisonTable,
    SWEEP_BATCH_SIZES,
};
pub use config::{ExperimentConfig, ModelConfig};
pub use diagnostics::{dump_diagnostics, sensitivity_csv, with_suffix, write_metrics, write_text, ClusterSeries, Diagnostics};
pub use evaluate::{
    accuracy_on, evaluate_batches, run_experiment, run_experiment_seed, BatchMetrics, BatchOutcome, ClusterSummary,
    MetricsRecord, OnlineEvaluator,
};
pub use train::{clean_scenario, templates_for, train_model};
