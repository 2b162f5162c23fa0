//! Experiment orchestration: config files, checkpoints, metrics and runs.

pub mod checkpoint;
pub mod config;
pub mod metrics;
pub mod run;

pub use checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint};
pub use config::{CommInit, ExperimentConfig, SystemKind, TaskKind};
pub use metrics::{read_metrics_file, write_metrics_file, EvalPoint, Metric, MetricsRow, RunMeta};
pub use run::{run, sweep, Stage, SweepAxis};
