//! Optimization, the training loop, metrics and checkpoints.

mod checkpoint;
mod config;
mod metrics;
mod optim;
mod trainer;

pub use checkpoint::{
    Checkpoint, MetricsSummary, OptimizerState, RngMark, ScheduleMark, TensorEntry, FORMAT_VERSION, MAGIC,
};
pub use config::{DataSpec, TrainConfig};
pub use metrics::{metrics_csv, write_metrics, MetricsRow, METRICS_HEADER};
pub use optim::{adamw_step, AdamW, AdamWParams};
pub use trainer::{evaluate, score, train, TrainOutcome, BEST_CHECKPOINT, FINAL_CHECKPOINT, METRICS_FILE};
