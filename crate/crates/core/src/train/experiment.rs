//! Experiment runners: one fresh model per (cell, seed).

use rayon::prelude::*;

use super::config::TrainConfig;
use super::trainer::{evaluate, fit, Evaluation};
use crate::agg::AggregatorKind;
use crate::error::Result;
use crate::synth::Bag;

/// Mean accuracy over seeds for one cell and task.
#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentRow {
    pub cell: String,
    pub task: usize,
    pub accuracy: f64,
    /// Standard error of the mean over seeds; 0 for a single seed.
    pub stderr: f64,
    pub seeds: usize,
}

/// One trained model's test results.
#[derive(Clone, Debug)]
pub struct CellRun {
    pub cell: String,
    pub seed: u64,
    pub loss_history: Vec<f64>,
    pub evaluation: Evaluation,
}

#[derive(Clone, Debug)]
pub struct ExperimentOutcome {
    pub rows: Vec<ExperimentRow>,
    pub runs: Vec<CellRun>,
}

impl ExperimentOutcome {
    pub fn row(&self, cell: &str, task: usize) -> Option<&ExperimentRow> {
        self.rows.iter().find(|r| r.cell == cell && r.task == task)
    }

    pub fn runs_for<'a>(&'a self, cell: &'a str) -> impl Iterator<Item = &'a CellRun> + 'a {
        self.runs.iter().filter(move |r| r.cell == cell)
    }
}

/// Sample mean and standard error of the mean.
pub fn mean_stderr(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Trains every (cell, seed) pair, in parallel when `parallel` is set, and
/// summarizes test accuracy per cell and task.
pub fn run_cells(
    cells: &[(String, TrainConfig)],
    seeds: &[u64],
    task_classes: &[usize],
    train: &[Bag],
    test: &[Bag],
    parallel: bool,
) -> Result<ExperimentOutcome> {
    let jobs: Vec<(&String, TrainConfig)> = cells
        .iter()
        .flat_map(|(name, cfg)| seeds.iter().map(move |&seed| (name, TrainConfig { seed, ..cfg.clone() })))
        .collect();
    let run = |(name, cfg): &(&String, TrainConfig)| -> Result<CellRun> {
        let (state, _) = fit(cfg, task_classes, train, None)?;
        Ok(CellRun {
            cell: (*name).clone(),
            seed: cfg.seed,
            evaluation: evaluate(&state, test)?,
            loss_history: state.loss_history,
        })
    };
    let runs: Vec<CellRun> = if parallel {
        jobs.par_iter().map(run).collect::<Result<_>>()?
    } else {
        jobs.iter().map(run).collect::<Result<_>>()?
    };
    let mut rows = Vec::new();
    for (name, _) in cells {
        for task in 0..task_classes.len() {
            let accs: Vec<f64> = runs
                .iter()
                .filter(|r| &r.cell == name)
                .filter_map(|r| r.evaluation.accuracy[task])
                .collect();
            if accs.is_empty() {
                continue;
            }
            let (accuracy, stderr) = mean_stderr(&accs);
            rows.push(ExperimentRow {
                cell: name.clone(),
                task,
                accuracy,
                stderr,
                seeds: accs.len(),
            });
        }
    }
    Ok(ExperimentOutcome { rows, runs })
}

/// Mean-aggregation training at each crop size; cells are named by size.
pub fn run_crop_size_experiment(
    train: &[Bag],
    test: &[Bag],
    task_classes: &[usize],
    sizes: &[usize],
    cfg: &TrainConfig,
    seeds: &[u64],
    parallel: bool,
) -> Result<ExperimentOutcome> {
    let cells: Vec<(String, TrainConfig)> = sizes
        .iter()
        .map(|&w| {
            (
                w.to_string(),
                TrainConfig {
                    crop_size: w,
                    aggregator: AggregatorKind::Mean,
                    ..cfg.clone()
                },
            )
        })
        .collect();
    run_cells(&cells, seeds, task_classes, train, test, parallel)
}

/// Identical training per aggregation kind; cells are named by kind.
pub fn run_aggregator_experiment(
    train: &[Bag],
    test: &[Bag],
    task_classes: &[usize],
    kinds: &[AggregatorKind],
    cfg: &TrainConfig,
    seeds: &[u64],
    parallel: bool,
) -> Result<ExperimentOutcome> {
    let cells: Vec<(String, TrainConfig)> = kinds
        .iter()
        .map(|&aggregator| {
            (
                aggregator.name().to_string(),
                TrainConfig {
                    aggregator,
                    ..cfg.clone()
                },
            )
        })
        .collect();
    run_cells(&cells, seeds, task_classes, train, test, parallel)
}

/// Four consecutive seeds starting at `base`.
pub fn default_seeds(base: u64) -> Vec<u64> {
    (base..base + 4).collect()
}
