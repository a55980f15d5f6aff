//! Bag-level aggregation of instance predictions.
//!
//! All three aggregators pool only over foreground instances and are
//! invariant to instance order and count.

mod grid;
mod mask;
mod max;
mod mean;
mod quantile;

use std::fmt;
use std::str::FromStr;

pub use grid::InstanceGrid;
pub use mask::{downscale_mask, downscale_mask_with};
pub(crate) use mask::IntegralMask;
pub use max::{max_agg_backward, max_agg_forward, MaxState};
pub use mean::{mean_agg_backward, mean_agg_forward};
pub use quantile::{
    quantile_agg_backward, quantile_agg_forward, quantile_pool, quantile_position, QuantileGrads,
    QuantileHead, QuantileState,
};

use crate::error::{invalid, Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Default number of quantiles.
pub const DEFAULT_QUANTILES: usize = 15;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum AggregatorKind {
    Max,
    Mean,
    Quantile { quantiles: usize },
}

impl AggregatorKind {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Max => "max",
            Self::Mean => "mean",
            Self::Quantile { .. } => "quantile",
        }
    }

    /// Parses `max`, `mean` or `quantile`, using `quantiles` for the latter.
    pub fn parse(name: &str, quantiles: usize) -> Result<Self> {
        match name {
            "max" => Ok(Self::Max),
            "mean" => Ok(Self::Mean),
            "quantile" if quantiles >= 1 => Ok(Self::Quantile { quantiles }),
            "quantile" => Err(invalid("quantile aggregation needs Q ≥ 1")),
            other => Err(invalid(format!("unknown aggregator {other:?}"))),
        }
    }
}

impl fmt::Display for AggregatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Quantile { quantiles } => write!(f, "quantile(Q={quantiles})"),
            other => f.write_str(other.name()),
        }
    }
}

impl FromStr for AggregatorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::parse(s, DEFAULT_QUANTILES)
    }
}

/// An aggregator together with its learned parameters, if any.
#[derive(Clone, Debug, PartialEq)]
pub enum Aggregator<T = f32> {
    Max,
    Mean,
    Quantile(QuantileHead<T>),
}

#[derive(Clone, Debug)]
pub enum AggState<T> {
    Max(MaxState<T>),
    Mean,
    Quantile(QuantileState<T>),
}

#[derive(Clone, Debug)]
pub struct AggForward<T> {
    /// Bag class distribution.
    pub output: Vec<T>,
    pub state: AggState<T>,
}

#[derive(Clone, Debug)]
pub struct AggGrads<T> {
    pub probs: Tensor<T>,
    /// In [`Aggregator::params`] order.
    pub params: Vec<Tensor<T>>,
}

impl<T: Scalar> Aggregator<T> {
    pub fn new(kind: AggregatorKind, classes: usize) -> Self {
        match kind {
            AggregatorKind::Max => Self::Max,
            AggregatorKind::Mean => Self::Mean,
            AggregatorKind::Quantile { quantiles } => {
                Self::Quantile(QuantileHead::zeros(classes, quantiles))
            }
        }
    }

    pub fn kind(&self) -> AggregatorKind {
        match self {
            Self::Max => AggregatorKind::Max,
            Self::Mean => AggregatorKind::Mean,
            Self::Quantile(head) => AggregatorKind::Quantile {
                quantiles: head.quantiles(),
            },
        }
    }

    pub fn forward(&self, grid: &InstanceGrid<T>) -> Result<AggForward<T>> {
        let fwd = match self {
            Self::Mean => AggForward {
                output: mean_agg_forward(grid),
                state: AggState::Mean,
            },
            Self::Max => {
                let state = max_agg_forward(grid);
                AggForward {
                    output: state.output.clone(),
                    state: AggState::Max(state),
                }
            }
            Self::Quantile(head) => {
                let state = quantile_pool(grid, head.quantiles())?;
                AggForward {
                    output: quantile_agg_forward(&state, head)?,
                    state: AggState::Quantile(state),
                }
            }
        };
        if fwd.output.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("aggregation".into()));
        }
        Ok(fwd)
    }

    pub fn backward(&self, grid: &InstanceGrid<T>, fwd: &AggForward<T>, grad: &[T]) -> Result<AggGrads<T>> {
        if grad.len() != grid.classes() {
            return Err(invalid(format!(
                "bag gradient has {} entries for {} classes",
                grad.len(),
                grid.classes()
            )));
        }
        match (self, &fwd.state) {
            (Self::Mean, AggState::Mean) => Ok(AggGrads {
                probs: mean_agg_backward(grid, grad),
                params: Vec::new(),
            }),
            (Self::Max, AggState::Max(state)) => Ok(AggGrads {
                probs: max_agg_backward(state, grid, grad),
                params: Vec::new(),
            }),
            (Self::Quantile(head), AggState::Quantile(state)) => {
                let g = quantile_agg_backward(state, head, grid, &fwd.output, grad)?;
                Ok(AggGrads {
                    probs: g.probs,
                    params: vec![g.weights, g.bias],
                })
            }
            _ => Err(invalid("forward state does not match aggregator")),
        }
    }

    pub fn params(&self) -> Vec<&Tensor<T>> {
        match self {
            Self::Quantile(head) => vec![&head.weights, &head.bias],
            _ => Vec::new(),
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        match self {
            Self::Quantile(head) => vec![&mut head.weights, &mut head.bias],
            _ => Vec::new(),
        }
    }
}

/// Bag class distributions, one vector per task.
#[derive(Clone, Debug, PartialEq)]
pub struct BagPrediction {
    pub tasks: Vec<Vec<f64>>,
}

impl BagPrediction {
    pub fn argmax(&self, task: usize) -> usize {
        argmax(&self.tasks[task])
    }
}

/// Index of the largest entry, lowest index on ties.
pub fn argmax<T: PartialOrd + Copy>(values: &[T]) -> usize {
    values
        .iter()
        .enumerate()
        .fold(0, |best, (i, &v)| if v > values[best] { i } else { best })
}
