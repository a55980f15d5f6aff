use super::*;
use crate::agg::{AggregatorKind, BagPrediction};
use crate::nn::TaskLabels;
use crate::synth::{default_textures, generate_dataset, sample_recipes, Bag, BagRecipe, Dataset, LabelRule, MixturePrior};
use crate::tensor::Tensor;

/// Two textures, one argmax task, single-texture bags.
fn separable(groups: usize, seed: u64) -> Dataset {
    let mut template = BagRecipe::desk_scale(vec![0.5, 0.5]);
    template.image_size = 24;
    template.disk_radius = 11.0;
    template.textures = default_textures()[..2].to_vec();
    template.tasks = vec![LabelRule::ArgmaxOfMixture];
    template.missing_rate = vec![0.0];
    let recipes = sample_recipes(&template, &MixturePrior::Pure(vec![0.5, 0.5]), groups, seed);
    generate_dataset(&recipes, seed).unwrap()
}

fn small_cfg() -> TrainConfig {
    TrainConfig {
        crop_size: 24,
        epochs: 1,
        lr: 0.01,
        aggregator: AggregatorKind::Mean,
        conv1_channels: 4,
        conv2_channels: 4,
        ..TrainConfig::default()
    }
}

#[test]
fn zero_learning_rate_freezes_parameters() {
    let ds = separable(4, 1);
    let cfg = TrainConfig { lr: 0.0, aggregator: AggregatorKind::Quantile { quantiles: 3 }, ..small_cfg() };
    let mut state = TrainState::new(&cfg, &ds.task_classes).unwrap();
    let before: Vec<_> = state.params().into_iter().cloned().collect();
    let metrics = train_epoch(&mut state, &ds.train, &cfg).unwrap();
    let after: Vec<_> = state.params().into_iter().cloned().collect();
    assert_eq!(before, after);
    assert_eq!(state.loss_history.len(), 1);
    assert!(metrics.mean_loss > 0.0);
}

#[test]
fn loss_trends_down_on_separable_data() {
    let ds = separable(8, 2);
    let cfg = TrainConfig { epochs: 20, lr_schedule: LrSchedule::Constant, ..small_cfg() };
    let (state, _) = fit(&cfg, &ds.task_classes, &ds.train, None).unwrap();
    let h = &state.loss_history;
    let first: f64 = h[..5].iter().sum();
    let last: f64 = h[15..].iter().sum();
    assert!(last < 0.8 * first, "{h:?}");
    let falling = h.windows(2).filter(|w| w[1] < w[0]).count();
    assert!(falling >= 15, "{h:?}");
}

#[test]
fn identical_seeds_give_identical_histories() {
    let ds = separable(4, 3);
    let cfg = TrainConfig { epochs: 3, crop_size: 16, ..small_cfg() };
    let (a, _) = fit(&cfg, &ds.task_classes, &ds.train, None).unwrap();
    let (b, _) = fit(&cfg, &ds.task_classes, &ds.train, None).unwrap();
    assert_eq!(a.loss_history, b.loss_history);
    assert_eq!(a.params(), b.params());
}

#[test]
fn crop_below_receptive_field_is_rejected() {
    let cfg = TrainConfig { crop_size: 10, ..small_cfg() };
    assert!(TrainState::new(&cfg, &[2]).is_err());
}

#[test]
fn identical_group_members_match_single_prediction() {
    let ds = separable(2, 4);
    let cfg = small_cfg();
    let state = TrainState::new(&cfg, &ds.task_classes).unwrap();
    let mut bag = ds.test[0].clone();
    bag.group_id = 7;
    let single = evaluate(&state, std::slice::from_ref(&bag)).unwrap();
    let triple = evaluate(&state, &[bag.clone(), bag.clone(), bag]).unwrap();
    let (a, b) = (&single.groups[0].probs[0], &triple.groups[0].probs[0]);
    assert!(a.iter().zip(b).all(|(x, y)| (x - y).abs() < 1e-12));
    assert_eq!(triple.groups.len(), 1);
}

#[test]
fn untrained_quantile_model_predicts_uniform() {
    let ds = separable(4, 5);
    let cfg = TrainConfig { aggregator: AggregatorKind::Quantile { quantiles: 5 }, ..small_cfg() };
    let state = TrainState::new(&cfg, &ds.task_classes).unwrap();
    let eval = evaluate(&state, &ds.test).unwrap();
    for p in &eval.predictions {
        assert!(p.tasks[0].iter().all(|&v| (v - 0.5).abs() < 1e-6));
    }
}

fn fixture_bag(group_id: u32, label: Option<usize>) -> Bag {
    Bag {
        image: Tensor::zeros(&[11, 11, 3]),
        mask: Tensor::full(&[11, 11], 1.0),
        labels: TaskLabels(vec![label]),
        group_id,
        true_mixture: vec![0.5, 0.5],
    }
}

#[test]
fn hand_built_fixture_accuracy() {
    // Groups: 0 = {bag0, bag1} label 1, mean [0.45, 0.55] → correct.
    // 1 = {bag2} label 0, predicts 1 → wrong. 2 = {bag3} missing → skipped.
    let bags = vec![fixture_bag(0, Some(1)), fixture_bag(0, Some(1)), fixture_bag(1, Some(0)), fixture_bag(2, None)];
    let preds = [[0.6, 0.4], [0.3, 0.7], [0.2, 0.8], [0.9, 0.1]]
        .iter()
        .map(|p| BagPrediction { tasks: vec![p.to_vec()] })
        .collect::<Vec<_>>();
    let (acc, groups) = group_accuracy(&bags, &preds).unwrap();
    assert_eq!(acc, vec![Some(0.5)]);
    assert_eq!(groups.len(), 3);
    assert_eq!(groups[0].predicted, vec![1]);
    assert_eq!(groups[2].correct(0), None);
    assert!(group_accuracy(&bags, &preds[..2]).is_err());
}

#[test]
fn single_instance_crop_makes_mean_the_identity() {
    let ds = separable(2, 6);
    let cfg = TrainConfig { crop_size: 11, ..small_cfg() };
    let state = TrainState::new(&cfg, &ds.task_classes).unwrap();
    let bag = &ds.train[0];
    let spec = crate::augment::CropSpec { x: 6, y: 6, size: 11 };
    let (image, mask) = crate::augment::extract_crop(&bag.image, &bag.mask, &spec).unwrap();
    let (grids, pred) = state.predict(&image, &mask).unwrap();
    assert_eq!(grids[0].instances(), 1);
    let instance: Vec<f64> = grids[0].instance(0).iter().map(|&v| v as f64).collect();
    assert_eq!(pred.tasks[0], instance);
    let pooled = crate::agg::quantile_pool(&grids[0], 4).unwrap();
    for q in 0..4 {
        for c in 0..2 {
            assert_eq!(pooled.z_at(q, c), grids[0].prob(0, c));
        }
    }
}

#[test]
fn checkpoint_roundtrip_preserves_predictions() {
    let ds = separable(2, 7);
    let cfg = TrainConfig { aggregator: AggregatorKind::Quantile { quantiles: 3 }, ..small_cfg() };
    let (state, _) = fit(&cfg, &ds.task_classes, &ds.train, None).unwrap();
    let mut buf = Vec::new();
    write_checkpoint(&mut buf, &state.model, &state.heads).unwrap();
    let ck = read_checkpoint(&mut buf.as_slice()).unwrap();
    assert_eq!(ck.model, state.model);
    assert_eq!(ck.heads, state.heads);
    let mut again = Vec::new();
    write_checkpoint(&mut again, &ck.model, &ck.heads).unwrap();
    assert_eq!(buf, again);
}

#[test]
fn single_cell_experiment_gives_one_row_per_task() {
    let ds = separable(4, 8);
    let out = run_crop_size_experiment(&ds.train, &ds.test, &ds.task_classes, &[24], &small_cfg(), &[0], false).unwrap();
    assert_eq!(out.rows.len(), 1);
    assert_eq!(out.rows[0].cell, "24");
    assert_eq!(out.rows[0].seeds, 1);
    assert_eq!(out.rows[0].stderr, 0.0);
    let kinds = [AggregatorKind::Max];
    let out = run_aggregator_experiment(&ds.train, &ds.test, &ds.task_classes, &kinds, &small_cfg(), &[0, 1], true).unwrap();
    assert_eq!(out.rows.len(), 1);
    assert_eq!(out.rows[0].seeds, 2);
}

#[test]
fn stderr_of_known_values() {
    let (m, se) = mean_stderr(&[1.0, 2.0, 3.0, 4.0]);
    assert_eq!(m, 2.5);
    // Sample variance 5/3, divided by 4.
    assert!((se - (5.0f64 / 12.0).sqrt()).abs() < 1e-12);
}
