use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use micnn::agg::AggregatorKind;
use micnn::eval::{
    default_palette, emit_accuracy_plot_data, heterogeneity_proportions, mcnemar_with, render_heatmap, GridGeometry,
    McNemarVariant,
};
use micnn::synth::{generate_dataset, load_dataset, sample_recipes, save_dataset, BagRecipe, MixturePrior};
use micnn::train::{
    default_seeds, evaluate, load_checkpoint, run_aggregator_experiment, run_crop_size_experiment, save_checkpoint,
    train_epoch, Checkpoint, TrainConfig, TrainState,
};

#[derive(Parser)]
#[command(name = "micnn", version, about = "Multiple instance learning with fully convolutional networks")]
struct Cli {
    /// Training configuration file (key = value lines).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the seed from the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset (train.bin and test.bin).
    Generate(GenerateArgs),
    /// Train a model and write a checkpoint.
    Train(DataArgs),
    /// Evaluate a checkpoint on a test set.
    Eval(EvalArgs),
    /// Run a comparison experiment.
    #[command(subcommand)]
    Experiment(Experiment),
    /// Render instance-prediction heatmaps as PPM images.
    Visualize(VisualizeArgs),
    /// Compare two prediction files with McNemar's test.
    Mcnemar(McNemarArgs),
}

#[derive(Args)]
struct GenerateArgs {
    /// Number of groups; half go to the test split.
    #[arg(long, default_value_t = 800)]
    groups: usize,
    /// Images per group.
    #[arg(long, default_value_t = 1)]
    group_size: usize,
    /// `heterogeneous` or `homogeneous`.
    #[arg(long, default_value = "heterogeneous")]
    prior: String,
    /// Probability that each label is withheld.
    #[arg(long, default_value_t = 0.0)]
    missing_rate: f64,
}

#[derive(Args)]
struct DataArgs {
    /// Directory holding train.bin and test.bin.
    #[arg(long, default_value = "out")]
    data: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Dataset file to evaluate.
    #[arg(long)]
    data: PathBuf,
}

#[derive(Subcommand)]
enum Experiment {
    /// Mean-aggregation accuracy as the training crop grows.
    CropSize {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, value_delimiter = ',', default_value = "11,32,64")]
        sizes: Vec<usize>,
        #[arg(long, default_value_t = 1)]
        seeds: usize,
        /// Train cells concurrently.
        #[arg(long)]
        parallel: bool,
    },
    /// Accuracy per aggregation layer, averaged over seeds.
    Aggregator {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, value_delimiter = ',', default_value = "quantile,mean,max")]
        kinds: Vec<String>,
        #[arg(long, default_value_t = 4)]
        seeds: usize,
        #[arg(long)]
        parallel: bool,
    },
}

#[derive(Args)]
struct VisualizeArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Task whose instance predictions are painted.
    #[arg(long, default_value_t = 0)]
    task: usize,
    /// Number of bags to render, from the start of the file.
    #[arg(long, default_value_t = 4)]
    count: usize,
}

#[derive(Args)]
struct McNemarArgs {
    /// Predictions CSV written by `eval`.
    a: PathBuf,
    b: PathBuf,
    #[arg(long, default_value_t = 0)]
    task: usize,
    /// Exact binomial test instead of the continuity-corrected statistic.
    #[arg(long)]
    exact: bool,
}

fn load_config(cli: &Cli) -> Result<TrainConfig> {
    let mut cfg = match &cli.config {
        Some(path) => TrainConfig::load(path).with_context(|| format!("reading {}", path.display()))?,
        None => TrainConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn split_paths(dir: &Path) -> (PathBuf, PathBuf) {
    (dir.join("train.bin"), dir.join("test.bin"))
}

fn generate(cli: &Cli, args: &GenerateArgs) -> Result<()> {
    let prior = match args.prior.as_str() {
        "heterogeneous" => MixturePrior::heterogeneous(),
        "homogeneous" => MixturePrior::homogeneous(),
        other => bail!("unknown prior {other:?}"),
    };
    let seed = cli.seed.unwrap_or(0);
    let mut template = BagRecipe::desk_scale(vec![1.0 / 3.0; 3]);
    template.group_size = args.group_size;
    template.missing_rate = vec![args.missing_rate; template.tasks.len()];
    let recipes = sample_recipes(&template, &prior, args.groups, seed);
    let ds = generate_dataset(&recipes, seed)?;
    let (train, test) = split_paths(&cli.out);
    save_dataset(&train, &ds.task_classes, &ds.train)?;
    save_dataset(&test, &ds.task_classes, &ds.test)?;
    println!("wrote {} train and {} test bags to {}", ds.train.len(), ds.test.len(), cli.out.display());
    Ok(())
}

fn train(cli: &Cli, args: &DataArgs) -> Result<()> {
    let cfg = load_config(cli)?;
    let (train_path, test_path) = split_paths(&args.data);
    let (task_classes, train) = load_dataset(&train_path).with_context(|| format!("reading {}", train_path.display()))?;
    let test = if cfg.eval_every > 0 { Some(load_dataset(&test_path)?.1) } else { None };
    let mut state = TrainState::new(&cfg, &task_classes)?;
    for _ in 0..cfg.epochs {
        let m = train_epoch(&mut state, &train, &cfg)?;
        print!("epoch {} loss {:.6} crops {} fallback {}", m.epoch, m.mean_loss, m.crops, m.fallback_crops);
        if let Some(test) = &test {
            if m.epoch % cfg.eval_every == 0 {
                print!(" accuracy {}", format_accuracy(&evaluate(&state, test)?.accuracy));
            }
        }
        println!();
    }
    save_checkpoint(&cli.out.join("checkpoint.bin"), &state.model, &state.heads)?;
    let history: String = state.loss_history.iter().enumerate().map(|(e, l)| format!("{},{l}\n", e + 1)).collect();
    fs::write(cli.out.join("loss_history.csv"), format!("epoch,loss\n{history}"))?;
    fs::write(cli.out.join("config.txt"), cfg.to_config_string())?;
    println!("wrote checkpoint to {}", cli.out.join("checkpoint.bin").display());
    Ok(())
}

fn format_accuracy(acc: &[Option<f64>]) -> String {
    acc.iter()
        .map(|a| a.map_or("n/a".to_string(), |a| format!("{a:.4}")))
        .collect::<Vec<_>>()
        .join(" ")
}

fn state_from(ck: Checkpoint) -> Result<TrainState> {
    let mut cfg = TrainConfig::default();
    cfg.aggregator = ck.heads[0].kind();
    cfg.crop_size = ck.model.receptive_field();
    let mut state = TrainState::new(&cfg, &ck.model.task_classes)?;
    state.model = ck.model;
    state.heads = ck.heads;
    Ok(state)
}

fn eval(cli: &Cli, args: &EvalArgs) -> Result<()> {
    let state = state_from(load_checkpoint(&args.checkpoint)?)?;
    let (_, bags) = load_dataset(&args.data)?;
    let ev = evaluate(&state, &bags)?;
    for (t, a) in ev.accuracy.iter().enumerate() {
        println!("task {t} accuracy {}", a.map_or("n/a".to_string(), |a| format!("{a:.4}")));
    }
    let mut csv = String::from("group,task,label,predicted\n");
    for g in &ev.groups {
        for (t, p) in g.predicted.iter().enumerate() {
            let label = g.labels.get(t).map_or(String::new(), |l| l.to_string());
            csv.push_str(&format!("{},{t},{label},{p}\n", g.group_id));
        }
    }
    fs::write(cli.out.join("predictions.csv"), csv)?;
    for t in 0..state.heads.len() {
        let grids: Vec<_> = ev.grids.iter().map(|g| &g[t]).collect();
        let labels: Vec<_> = bags.iter().map(|b| b.labels.get(t)).collect();
        let mixtures: Vec<_> = bags.iter().map(|b| b.true_mixture.clone()).collect();
        let mixtures = (mixtures[0].len() == state.model.task_classes[t]).then_some(mixtures.as_slice());
        let report = heterogeneity_proportions(&grids, &labels, mixtures)?;
        report.write_csv(fs::File::create(cli.out.join(format!("heterogeneity_task{t}.csv")))?)?;
        if let Some(r) = report.correlation_with_truth() {
            println!("task {t} proportion correlation {r:.4}");
        }
    }
    Ok(())
}

fn experiment(cli: &Cli, which: &Experiment) -> Result<()> {
    let cfg = load_config(cli)?;
    let (data, seeds, parallel) = match which {
        Experiment::CropSize { data, seeds, parallel, .. } | Experiment::Aggregator { data, seeds, parallel, .. } => {
            (data, *seeds, *parallel)
        }
    };
    let (train_path, test_path) = split_paths(&data.data);
    let (task_classes, train) = load_dataset(&train_path)?;
    let (_, test) = load_dataset(&test_path)?;
    let seeds: Vec<u64> = (cfg.seed..cfg.seed + seeds as u64).collect();
    let (name, outcome) = match which {
        Experiment::CropSize { sizes, .. } => (
            "crop_size.csv",
            run_crop_size_experiment(&train, &test, &task_classes, sizes, &cfg, &seeds, parallel)?,
        ),
        Experiment::Aggregator { kinds, .. } => {
            let quantiles = match cfg.aggregator {
                AggregatorKind::Quantile { quantiles } => quantiles,
                _ => micnn::agg::DEFAULT_QUANTILES,
            };
            let kinds = kinds
                .iter()
                .map(|k| AggregatorKind::parse(k, quantiles))
                .collect::<micnn::Result<Vec<_>>>()?;
            let seeds = if seeds.is_empty() { default_seeds(cfg.seed) } else { seeds };
            ("aggregator.csv", run_aggregator_experiment(&train, &test, &task_classes, &kinds, &cfg, &seeds, parallel)?)
        }
    };
    for r in &outcome.rows {
        println!("{:>9} task {} accuracy {:.4} ({:.4}) seeds {}", r.cell, r.task, r.accuracy, r.stderr, r.seeds);
    }
    fs::write(cli.out.join(name), emit_accuracy_plot_data(&outcome.rows)?)?;
    Ok(())
}

fn visualize(cli: &Cli, args: &VisualizeArgs) -> Result<()> {
    let state = state_from(load_checkpoint(&args.checkpoint)?)?;
    let (_, bags) = load_dataset(&args.data)?;
    if args.task >= state.heads.len() {
        bail!("task {} out of range", args.task);
    }
    let geometry = GridGeometry::of(&state.model);
    for (i, bag) in bags.iter().take(args.count).enumerate() {
        let (grids, _) = state.predict(&bag.image, &bag.mask)?;
        let path = cli.out.join(format!("heatmap_{i}_task{}.ppm", args.task));
        render_heatmap(&bag.image, &grids[args.task], geometry, &default_palette())?.save_ppm(&path)?;
        println!("wrote {}", path.display());
    }
    Ok(())
}

/// `(group, label, predicted)` rows of one task from a predictions CSV.
fn read_predictions(path: &Path, task: usize) -> Result<Vec<(u32, Option<usize>, usize)>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 4 {
            bail!("{}:{}: expected 4 fields", path.display(), i + 1);
        }
        if f[1].parse::<usize>()? != task {
            continue;
        }
        let label = if f[2].is_empty() { None } else { Some(f[2].parse()?) };
        rows.push((f[0].parse()?, label, f[3].parse()?));
    }
    Ok(rows)
}

fn run_mcnemar(args: &McNemarArgs) -> Result<()> {
    let a = read_predictions(&args.a, args.task)?;
    let b = read_predictions(&args.b, args.task)?;
    if a.iter().map(|r| r.0).ne(b.iter().map(|r| r.0)) {
        bail!("prediction files cover different groups");
    }
    let labels: Vec<_> = a.iter().map(|r| r.1).collect();
    let pa: Vec<_> = a.iter().map(|r| r.2).collect();
    let pb: Vec<_> = b.iter().map(|r| r.2).collect();
    let variant = if args.exact { McNemarVariant::Exact } else { McNemarVariant::ContinuityCorrected };
    let r = mcnemar_with(&pa, &pb, &labels, variant)?;
    println!("b={} c={} statistic={:.6} p={:.6e}", r.b, r.c, r.statistic, r.p_value);
    Ok(())
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    if !matches!(cli.command, Command::Mcnemar(_)) {
        fs::create_dir_all(&cli.out).with_context(|| format!("creating {}", cli.out.display()))?;
    }
    match &cli.command {
        Command::Generate(args) => generate(&cli, args),
        Command::Train(args) => train(&cli, args),
        Command::Eval(args) => eval(&cli, args),
        Command::Experiment(which) => experiment(&cli, which),
        Command::Visualize(args) => visualize(&cli, args),
        Command::Mcnemar(args) => run_mcnemar(args),
    }
}
