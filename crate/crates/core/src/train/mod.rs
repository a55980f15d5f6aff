//! Training, evaluation, experiments and checkpoints.

mod checkpoint;
mod config;
mod experiment;
mod trainer;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, Checkpoint};
pub use config::{LrSchedule, TrainConfig};
pub use experiment::{
    default_seeds, mean_stderr, run_aggregator_experiment, run_cells, run_crop_size_experiment, CellRun,
    ExperimentOutcome, ExperimentRow,
};
pub use trainer::{
    evaluate, fit, group_accuracy, predict_with, prepare_input, train_epoch, EpochMetrics, EvalPoint, Evaluation,
    GroupOutcome, TrainState, DIVERGENCE_LOSS,
};

#[cfg(test)]
mod tests;
