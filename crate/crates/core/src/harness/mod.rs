//! Experiment orchestration: config, the training loop, metrics, checkpoints
//! and strategy comparisons.

pub mod analysis;
pub mod checkpoint;
pub mod compare;
pub mod config;
pub mod experiment;
pub mod export;
pub mod metrics;
pub mod sweep;

pub use analysis::{occupancy_peaks, tier_occupancy, warmup_end};
pub use checkpoint::Checkpoint;
pub use compare::{compare_strategies, ComparisonReport, Target};
pub use config::{ExperimentConfig, StrategyKind};
pub use experiment::{resume_to_dir, run_experiment, run_to_dir, Experiment, RunOutput};
pub use metrics::{IterationMetrics, MetricsHeader, MetricsLog};
