//! Training, evaluation, the latent probe, checkpoints, exports and the CLI.

mod checkpoint;
pub mod cli;
mod config;
mod data;
mod eval;
mod export;
mod optim;
mod probe;
mod train;

pub use checkpoint::{load_checkpoint, model_from_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use config::{DatasetSpec, TrainConfig};
pub use data::{load_dataset, Dataset};
pub use eval::{category_entropy, evaluate, mean_bce, step_metrics, EvalOptions, MetricsRow, StepMetrics};
pub use export::{metrics_csv, pgm_grid, write_metrics_csv, write_pgm, write_pgm_grid, CSV_HEADER};
pub use optim::{clip_grad_norm, Adam};
pub use probe::{probe_features, train_probe, Probe, ProbeReport};
pub use train::{episode_loss, train, EpisodeBatch, EpochLog, TrainOutcome};
