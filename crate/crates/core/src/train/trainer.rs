//! The training loop and whole-image evaluation.

use rand::seq::SliceRandom;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::TrainConfig;
use crate::agg::{downscale_mask, AggForward, Aggregator, BagPrediction, InstanceGrid};
use crate::augment::{apply_dihedral, crop_count, extract_crop, sample_crop, Dihedral};
use crate::error::{Error, Result};
use crate::nn::{masked_cross_entropy, FcnModel, ModelSpec, Sgd, TaskLabels};
use crate::synth::{groups, Bag};
use crate::tensor::Tensor;

/// Losses above this abort training.
pub const DIVERGENCE_LOSS: f64 = 1e3;

/// Images are centred on mid-grey before entering the network.
pub fn prepare_input(image: &Tensor<f32>) -> Tensor<f32> {
    let data = image.data().iter().map(|v| v - 0.5).collect();
    Tensor::new(image.shape(), data).expect("same shape")
}

#[derive(Clone, Debug)]
pub struct TrainState {
    pub model: FcnModel<f32>,
    /// One aggregation layer per task.
    pub heads: Vec<Aggregator<f32>>,
    pub optimizer: Sgd<f32>,
    pub epoch: usize,
    pub rng: ChaCha8Rng,
    /// Mean crop loss of each finished epoch.
    pub loss_history: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub mean_loss: f64,
    pub crops: usize,
    pub fallback_crops: usize,
}

impl TrainState {
    pub fn new(cfg: &TrainConfig, task_classes: &[usize]) -> Result<Self> {
        cfg.validate()?;
        let spec = ModelSpec::with_widths(task_classes.to_vec(), cfg.conv1_channels, cfg.conv2_channels);
        let model = FcnModel::init(&spec, cfg.seed)?;
        if cfg.crop_size < model.receptive_field() {
            return Err(Error::InvalidArgument(format!(
                "crop size {} is below the receptive field {}",
                cfg.crop_size,
                model.receptive_field()
            )));
        }
        let heads: Vec<Aggregator<f32>> = task_classes.iter().map(|&c| Aggregator::new(cfg.aggregator, c)).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(1);
        let mut params = model.params();
        params.extend(heads.iter().flat_map(|h| h.params()));
        let optimizer = Sgd::new(cfg.lr, cfg.momentum, &params)?;
        Ok(Self {
            model,
            heads,
            optimizer,
            epoch: 0,
            rng,
            loss_history: Vec::new(),
        })
    }

    /// Network parameters followed by each task's aggregation parameters.
    pub fn params(&self) -> Vec<&Tensor<f32>> {
        let mut out = self.model.params();
        for head in &self.heads {
            out.extend(head.params());
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor<f32>> {
        params_mut(&mut self.model, &mut self.heads)
    }

    /// Probability grids and aggregated outputs for one image.
    pub fn predict(&self, image: &Tensor<f32>, mask: &Tensor<f32>) -> Result<(Vec<InstanceGrid<f32>>, BagPrediction)> {
        predict_with(&self.model, &self.heads, image, mask)
    }
}

fn params_mut<'a>(model: &'a mut FcnModel<f32>, heads: &'a mut [Aggregator<f32>]) -> Vec<&'a mut Tensor<f32>> {
    let mut out = model.params_mut();
    for head in heads {
        out.extend(head.params_mut());
    }
    out
}

/// Runs the network and each task's aggregation over a whole image.
pub fn predict_with(
    model: &FcnModel<f32>,
    heads: &[Aggregator<f32>],
    image: &Tensor<f32>,
    mask: &Tensor<f32>,
) -> Result<(Vec<InstanceGrid<f32>>, BagPrediction)> {
    let cache = model.forward(&prepare_input(image))?;
    let grid_mask = downscale_mask(mask, model);
    let mut grids = Vec::with_capacity(heads.len());
    let mut tasks = Vec::with_capacity(heads.len());
    for (probs, head) in cache.probs.into_iter().zip(heads) {
        let grid = InstanceGrid::new(probs, &grid_mask)?;
        let out = head.forward(&grid)?;
        tasks.push(out.output.iter().map(|&v| v as f64).collect());
        grids.push(grid);
    }
    Ok((grids, BagPrediction { tasks }))
}

/// One SGD step on one crop; returns the crop loss.
fn train_crop(state: &mut TrainState, image: &Tensor<f32>, mask: &Tensor<f32>, labels: &TaskLabels, weights: &[f64]) -> Result<f64> {
    let cache = state.model.forward(&prepare_input(image))?;
    let grid_mask = downscale_mask(mask, &state.model);
    let mut grids = Vec::with_capacity(state.heads.len());
    let mut forwards: Vec<AggForward<f32>> = Vec::with_capacity(state.heads.len());
    for (probs, head) in cache.probs.iter().zip(&state.heads) {
        let grid = InstanceGrid::new(probs.clone(), &grid_mask)?;
        forwards.push(head.forward(&grid)?);
        grids.push(grid);
    }
    let outputs: Vec<Vec<f32>> = forwards.iter().map(|f| f.output.clone()).collect();
    let loss = masked_cross_entropy(&outputs, labels, weights)?;
    let mut grad_probs = Vec::with_capacity(grids.len());
    let mut head_grads = Vec::new();
    for (((head, grid), fwd), g) in state.heads.iter().zip(&grids).zip(&forwards).zip(&loss.grads) {
        let grads = head.backward(grid, fwd, g)?;
        grad_probs.push(grads.probs);
        head_grads.extend(grads.params);
    }
    let mut grads = state.model.backward(&cache, &grad_probs)?;
    grads.extend(head_grads);
    let mut params = params_mut(&mut state.model, &mut state.heads);
    state.optimizer.step(&mut params, &grads)?;
    Ok(loss.loss as f64)
}

/// One pass over `bags` in a seeded random order, `crop_count` crops per bag.
pub fn train_epoch(state: &mut TrainState, bags: &[Bag], cfg: &TrainConfig) -> Result<EpochMetrics> {
    if bags.is_empty() {
        return Err(Error::InvalidArgument("empty training set".into()));
    }
    let weights = cfg.weights_for(state.heads.len())?;
    let mut order: Vec<usize> = (0..bags.len()).collect();
    order.shuffle(&mut state.rng);
    let full = bags[0].image.shape()[0];
    let per_epoch = bags.len() * crop_count(cfg.crop_size, full);
    let total_steps = (cfg.epochs.max(state.epoch + 1) * per_epoch) as f64;
    let mut total = 0.0;
    let mut crops = 0;
    let mut fallback_crops = 0;
    for &b in &order {
        let bag = &bags[b];
        let full = bag.image.shape()[0];
        let aug = cfg.augment(full);
        aug.validate(state.model.receptive_field())?;
        for _ in 0..crop_count(cfg.crop_size, full) {
            let (image, mask) = if cfg.crop_size == full {
                (bag.image.clone(), bag.mask.clone())
            } else {
                let sample = sample_crop(&bag.mask, &aug, &mut state.rng)?;
                fallback_crops += usize::from(sample.fallback);
                extract_crop(&bag.image, &bag.mask, &sample.spec)?
            };
            let step = (state.epoch * per_epoch + crops) as f64;
            state.optimizer.lr = cfg.lr_schedule.rate(cfg.lr, step / total_steps);
            let transform = Dihedral::sample(&aug, &mut state.rng);
            let (image, mask) = apply_dihedral(&image, &mask, transform)?;
            let loss = train_crop(state, &image, &mask, &bag.labels, &weights)?;
            if !loss.is_finite() || loss > DIVERGENCE_LOSS || !state.params().iter().all(|p| p.is_finite()) {
                return Err(Error::Divergence {
                    epoch: state.epoch,
                    bag: b,
                    loss,
                });
            }
            total += loss;
            crops += 1;
        }
    }
    let mean_loss = total / crops as f64;
    state.loss_history.push(mean_loss);
    state.epoch += 1;
    Ok(EpochMetrics {
        epoch: state.epoch,
        mean_loss,
        crops,
        fallback_crops,
    })
}

/// Group-level outcome: mean bag prediction of the group's images.
#[derive(Clone, Debug, PartialEq)]
pub struct GroupOutcome {
    pub group_id: u32,
    pub labels: TaskLabels,
    pub probs: Vec<Vec<f64>>,
    pub predicted: Vec<usize>,
}

impl GroupOutcome {
    /// `None` when the task label is missing.
    pub fn correct(&self, task: usize) -> Option<bool> {
        self.labels.get(task).map(|l| l == self.predicted[task])
    }
}

#[derive(Clone, Debug)]
pub struct Evaluation {
    /// Per task; `None` when no group carries that label.
    pub accuracy: Vec<Option<f64>>,
    pub predictions: Vec<BagPrediction>,
    /// Per bag, one grid per task.
    pub grids: Vec<Vec<InstanceGrid<f32>>>,
    pub groups: Vec<GroupOutcome>,
}

/// Averages bag predictions within each group and scores the argmax against
/// the group label, skipping missing labels.
pub fn group_accuracy(bags: &[Bag], predictions: &[BagPrediction]) -> Result<(Vec<Option<f64>>, Vec<GroupOutcome>)> {
    if bags.len() != predictions.len() {
        return Err(Error::InvalidArgument(format!(
            "{} bags but {} predictions",
            bags.len(),
            predictions.len()
        )));
    }
    let tasks = predictions.first().map_or(0, |p| p.tasks.len());
    let mut outcomes = Vec::new();
    for (group_id, members) in groups(bags) {
        let mut probs: Vec<Vec<f64>> = predictions[members[0]].tasks.iter().map(|t| vec![0.0; t.len()]).collect();
        for &m in &members {
            for (acc, p) in probs.iter_mut().zip(&predictions[m].tasks) {
                acc.iter_mut().zip(p).for_each(|(a, v)| *a += v / members.len() as f64);
            }
        }
        let prediction = BagPrediction { tasks: probs };
        outcomes.push(GroupOutcome {
            group_id,
            labels: bags[members[0]].labels.clone(),
            predicted: (0..tasks).map(|t| prediction.argmax(t)).collect(),
            probs: prediction.tasks,
        });
    }
    let accuracy = (0..tasks)
        .map(|t| {
            let scored: Vec<bool> = outcomes.iter().filter_map(|o| o.correct(t)).collect();
            (!scored.is_empty()).then(|| scored.iter().filter(|&&c| c).count() as f64 / scored.len() as f64)
        })
        .collect();
    Ok((accuracy, outcomes))
}

/// Processes each test image whole and scores group-averaged predictions.
pub fn evaluate(state: &TrainState, bags: &[Bag]) -> Result<Evaluation> {
    let mut predictions = Vec::with_capacity(bags.len());
    let mut grids = Vec::with_capacity(bags.len());
    for bag in bags {
        let (g, p) = state.predict(&bag.image, &bag.mask)?;
        grids.push(g);
        predictions.push(p);
    }
    let (accuracy, groups) = group_accuracy(bags, &predictions)?;
    Ok(Evaluation {
        accuracy,
        predictions,
        grids,
        groups,
    })
}

/// Accuracy per task after an intermediate evaluation.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalPoint {
    pub epoch: usize,
    pub accuracy: Vec<Option<f64>>,
}

/// Trains a fresh model for `cfg.epochs` epochs, evaluating on `test` every
/// `cfg.eval_every` epochs when it is given.
pub fn fit(cfg: &TrainConfig, task_classes: &[usize], train: &[Bag], test: Option<&[Bag]>) -> Result<(TrainState, Vec<EvalPoint>)> {
    let mut state = TrainState::new(cfg, task_classes)?;
    let mut points = Vec::new();
    for _ in 0..cfg.epochs {
        train_epoch(&mut state, train, cfg)?;
        if let Some(test) = test {
            if cfg.eval_every > 0 && state.epoch % cfg.eval_every == 0 {
                points.push(EvalPoint {
                    epoch: state.epoch,
                    accuracy: evaluate(&state, test)?.accuracy,
                });
            }
        }
    }
    Ok((state, points))
}
