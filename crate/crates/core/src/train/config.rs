//! Flat `key = value` training configuration.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use crate::agg::{AggregatorKind, DEFAULT_QUANTILES};
use crate::augment::AugmentConfig;
use crate::error::{Error, Result};

/// Learning rate as a function of training progress.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum LrSchedule {
    Constant,
    /// Half-cosine decay from `lr` to zero over all training steps.
    #[default]
    Cosine,
}

impl LrSchedule {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Constant => "constant",
            Self::Cosine => "cosine",
        }
    }

    /// Rate at `progress` in `[0, 1]`.
    pub fn rate(&self, lr: f64, progress: f64) -> f64 {
        match self {
            Self::Constant => lr,
            Self::Cosine => 0.5 * lr * (1.0 + (std::f64::consts::PI * progress.clamp(0.0, 1.0)).cos()),
        }
    }
}

impl FromStr for LrSchedule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "constant" => Ok(Self::Constant),
            "cosine" => Ok(Self::Cosine),
            other => Err(Error::InvalidArgument(format!("unknown lr schedule {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub crop_size: usize,
    pub epochs: usize,
    pub lr: f64,
    pub lr_schedule: LrSchedule,
    pub momentum: f64,
    pub seed: u64,
    pub aggregator: AggregatorKind,
    /// One weight per task; empty means every task weighs 1.
    pub task_weights: Vec<f64>,
    /// Evaluate on the test split every this many epochs; 0 disables.
    pub eval_every: usize,
    pub mirror: bool,
    pub rotate90: bool,
    pub max_resample_attempts: usize,
    pub conv1_channels: usize,
    pub conv2_channels: usize,
}

impl Default for TrainConfig {
    /// Defaults tuned on the synthetic desk-scale data.
    fn default() -> Self {
        Self {
            crop_size: 64,
            epochs: 12,
            lr: 0.01,
            lr_schedule: LrSchedule::Cosine,
            momentum: 0.9,
            seed: 0,
            aggregator: AggregatorKind::Quantile {
                quantiles: DEFAULT_QUANTILES,
            },
            task_weights: Vec::new(),
            eval_every: 0,
            mirror: true,
            rotate90: true,
            max_resample_attempts: 100,
            conv1_channels: 8,
            conv2_channels: 16,
        }
    }
}

const KEYS: &[&str] = &[
    "crop_size",
    "epochs",
    "lr",
    "lr_schedule",
    "momentum",
    "seed",
    "aggregator",
    "quantiles",
    "task_weights",
    "eval_every",
    "mirror",
    "rotate90",
    "max_resample_attempts",
    "conv1_channels",
    "conv2_channels",
];

fn parse_value<T: FromStr>(line: usize, key: &str, value: &str) -> Result<T> {
    value.parse().map_err(|_| Error::Config {
        line,
        message: format!("bad value {value:?} for {key}"),
    })
}

impl TrainConfig {
    pub fn weights_for(&self, tasks: usize) -> Result<Vec<f64>> {
        if self.task_weights.is_empty() {
            return Ok(vec![1.0; tasks]);
        }
        if self.task_weights.len() != tasks {
            return Err(Error::InvalidArgument(format!(
                "{} task weights for {tasks} tasks",
                self.task_weights.len()
            )));
        }
        Ok(self.task_weights.clone())
    }

    pub fn augment(&self, full_size: usize) -> AugmentConfig {
        AugmentConfig {
            crop_size: self.crop_size,
            full_size,
            mirror: self.mirror,
            rotate90: self.rotate90,
            max_resample_attempts: self.max_resample_attempts,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.to_string()));
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return bad("lr must be a finite non-negative number");
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad("momentum must lie in [0, 1)");
        }
        if let AggregatorKind::Quantile { quantiles: 0 } = self.aggregator {
            return bad("quantiles must be at least 1");
        }
        if self.task_weights.iter().any(|&w| !(w >= 0.0)) {
            return bad("task weights must be non-negative");
        }
        if self.conv1_channels == 0 || self.conv2_channels == 0 || self.max_resample_attempts == 0 {
            return bad("channel counts and resample attempts must be positive");
        }
        Ok(())
    }

    /// Parses `key = value` lines. Blank lines and `#` comments are skipped;
    /// unknown keys are errors. Missing keys keep their defaults.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        let mut aggregator = cfg.aggregator.name().to_string();
        let mut quantiles = DEFAULT_QUANTILES;
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (key, value) = content.split_once('=').ok_or_else(|| Error::Config {
                line,
                message: format!("expected key=value, got {content:?}"),
            })?;
            let (key, value) = (key.trim(), value.trim());
            match key {
                "crop_size" => cfg.crop_size = parse_value(line, key, value)?,
                "epochs" => cfg.epochs = parse_value(line, key, value)?,
                "lr" => cfg.lr = parse_value(line, key, value)?,
                "lr_schedule" => cfg.lr_schedule = parse_value(line, key, value)?,
                "momentum" => cfg.momentum = parse_value(line, key, value)?,
                "seed" => cfg.seed = parse_value(line, key, value)?,
                "aggregator" => aggregator = value.to_string(),
                "quantiles" => quantiles = parse_value(line, key, value)?,
                "task_weights" => {
                    cfg.task_weights = value
                        .split(',')
                        .filter(|s| !s.trim().is_empty())
                        .map(|s| parse_value(line, key, s.trim()))
                        .collect::<Result<_>>()?
                }
                "eval_every" => cfg.eval_every = parse_value(line, key, value)?,
                "mirror" => cfg.mirror = parse_value(line, key, value)?,
                "rotate90" => cfg.rotate90 = parse_value(line, key, value)?,
                "max_resample_attempts" => cfg.max_resample_attempts = parse_value(line, key, value)?,
                "conv1_channels" => cfg.conv1_channels = parse_value(line, key, value)?,
                "conv2_channels" => cfg.conv2_channels = parse_value(line, key, value)?,
                other => {
                    return Err(Error::Config {
                        line,
                        message: format!("unknown key {other:?} (known: {})", KEYS.join(", ")),
                    })
                }
            }
        }
        cfg.aggregator = AggregatorKind::parse(&aggregator, quantiles).map_err(|e| Error::Config {
            line: 0,
            message: e.to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn to_config_string(&self) -> String {
        let mut s = String::new();
        let quantiles = match self.aggregator {
            AggregatorKind::Quantile { quantiles } => quantiles,
            _ => DEFAULT_QUANTILES,
        };
        let weights: Vec<String> = self.task_weights.iter().map(|w| w.to_string()).collect();
        let _ = writeln!(s, "crop_size = {}", self.crop_size);
        let _ = writeln!(s, "epochs = {}", self.epochs);
        let _ = writeln!(s, "lr = {}", self.lr);
        let _ = writeln!(s, "lr_schedule = {}", self.lr_schedule.name());
        let _ = writeln!(s, "momentum = {}", self.momentum);
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "aggregator = {}", self.aggregator.name());
        let _ = writeln!(s, "quantiles = {quantiles}");
        let _ = writeln!(s, "task_weights = {}", weights.join(","));
        let _ = writeln!(s, "eval_every = {}", self.eval_every);
        let _ = writeln!(s, "mirror = {}", self.mirror);
        let _ = writeln!(s, "rotate90 = {}", self.rotate90);
        let _ = writeln!(s, "max_resample_attempts = {}", self.max_resample_attempts);
        let _ = writeln!(s, "conv1_channels = {}", self.conv1_channels);
        let _ = writeln!(s, "conv2_channels = {}", self.conv2_channels);
        s
    }
}
