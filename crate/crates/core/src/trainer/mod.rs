//! Pretraining loop, checkpoints, evaluation and diagnostic exports.

mod checkpoint;
mod config;
mod eval;
mod export;
mod train;

pub use checkpoint::{Checkpoint, RngState, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use config::{apply_override, DataConfig, OutputConfig, SamplingConfig, TrainConfig};
pub use eval::{evaluate, pearson, EvalMetrics, EvalReport, Quantiles};
pub use export::{
    write_crsc_pairs, write_gap_scatter, write_route_arrows, MetricWriter, CRSC_PAIRS_HEADER, GAP_SCATTER_HEADER,
    METRIC_HEADER, ROUTE_ARROWS_HEADER,
};
pub use train::{train, StepMetrics, Trainer, EVAL_SEED_BASE};
