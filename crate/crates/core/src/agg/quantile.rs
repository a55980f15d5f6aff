//! Quantile-function pooling.
//!
//! For each class the foreground instance probabilities are sorted and `Q`
//! order statistics are read off: the `q`-th value is the sorted element at
//! 1-based position `⌈Ñ(q − 0.5)/Q⌉`, i.e. the value `z` with
//! `Pr(S_c ≤ z) = (q − 0.5)/Q`. The `Q × C` matrix of quantiles feeds a linear
//! softmax head. On the backward pass each quantile behaves like a max-pool
//! selection: its gradient flows unchanged to the instance that produced it.

use crate::agg::InstanceGrid;
use crate::error::{invalid, Result};
use crate::nn::activation::{softmax_in_place, softmax_vjp};
use crate::tensor::{Scalar, Tensor};

/// Pooled quantiles and the instances that achieved them.
#[derive(Clone, Debug, PartialEq)]
pub struct QuantileState<T> {
    pub quantiles: usize,
    pub classes: usize,
    /// `Q × C`; column `c` is the quantile function of class `c`.
    pub z: Tensor<T>,
    /// Flat instance index behind each entry of `z`, same layout.
    pub achiever: Vec<usize>,
}

impl<T: Scalar> QuantileState<T> {
    #[inline]
    pub fn z_at(&self, q: usize, c: usize) -> T {
        self.z.data()[q * self.classes + c]
    }

    /// `vec(Z) = [z_1, …, z_C]`, class-major.
    pub fn features(&self) -> Vec<T> {
        (0..self.classes)
            .flat_map(|c| (0..self.quantiles).map(move |q| (q, c)))
            .map(|(q, c)| self.z_at(q, c))
            .collect()
    }
}

/// Learned linear map from `vec(Z)` to class logits.
#[derive(Clone, Debug, PartialEq)]
pub struct QuantileHead<T = f32> {
    /// `C × (Q·C)`.
    pub weights: Tensor<T>,
    /// `C`.
    pub bias: Tensor<T>,
}

impl<T: Scalar> QuantileHead<T> {
    /// Zero weights and bias, which predict the uniform distribution.
    pub fn zeros(classes: usize, quantiles: usize) -> Self {
        Self {
            weights: Tensor::zeros(&[classes, quantiles * classes]),
            bias: Tensor::zeros(&[classes]),
        }
    }

    pub fn classes(&self) -> usize {
        self.bias.len()
    }

    pub fn quantiles(&self) -> usize {
        self.weights.shape()[1] / self.classes()
    }

    fn check(&self, state: &QuantileState<T>) -> Result<()> {
        if self.weights.shape() != [state.classes, state.quantiles * state.classes]
            || self.bias.len() != state.classes
        {
            return Err(invalid(format!(
                "head {:?} does not fit Q={} C={}",
                self.weights.shape(),
                state.quantiles,
                state.classes
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct QuantileGrads<T> {
    pub probs: Tensor<T>,
    pub weights: Tensor<T>,
    pub bias: Tensor<T>,
}

/// 1-based sorted position of the `q`-th (1-based) of `Q` quantiles among
/// `n` values: `⌈n(2q − 1)/(2Q)⌉`.
pub fn quantile_position(n: usize, q: usize, quantiles: usize) -> usize {
    (n * (2 * q - 1)).div_ceil(2 * quantiles)
}

pub fn quantile_pool<T: Scalar>(grid: &InstanceGrid<T>, quantiles: usize) -> Result<QuantileState<T>> {
    if quantiles == 0 {
        return Err(invalid("Q must be positive"));
    }
    let classes = grid.classes();
    let fg = grid.foreground();
    let n = fg.len();
    let mut z = vec![T::zero(); quantiles * classes];
    let mut achiever = vec![0; quantiles * classes];
    let mut sorted: Vec<(T, usize)> = Vec::with_capacity(n);
    for c in 0..classes {
        sorted.clear();
        sorted.extend(fg.iter().map(|&i| (grid.prob(i, c), i)));
        // Foreground indices arrive ascending, so a stable sort breaks ties by
        // instance index.
        sorted.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("finite probabilities"));
        for q in 0..quantiles {
            let (value, instance) = sorted[quantile_position(n, q + 1, quantiles) - 1];
            z[q * classes + c] = value;
            achiever[q * classes + c] = instance;
        }
    }
    Ok(QuantileState {
        quantiles,
        classes,
        z: Tensor::new(&[quantiles, classes], z)?,
        achiever,
    })
}

/// `softmax(W · vec(Z) + b)`.
pub fn quantile_agg_forward<T: Scalar>(state: &QuantileState<T>, head: &QuantileHead<T>) -> Result<Vec<T>> {
    head.check(state)?;
    let features = state.features();
    let width = features.len();
    let mut logits: Vec<T> = head
        .weights
        .data()
        .chunks_exact(width)
        .zip(head.bias.data())
        .map(|(row, &b)| row.iter().zip(&features).map(|(&w, &f)| w * f).sum::<T>() + b)
        .collect();
    softmax_in_place(&mut logits);
    Ok(logits)
}

/// Gradients for the head and for the instance probabilities. `output` is the
/// forward result. An instance that achieves several quantiles accumulates
/// all of their gradients.
pub fn quantile_agg_backward<T: Scalar>(
    state: &QuantileState<T>,
    head: &QuantileHead<T>,
    grid: &InstanceGrid<T>,
    output: &[T],
    grad: &[T],
) -> Result<QuantileGrads<T>> {
    head.check(state)?;
    let (classes, quantiles) = (state.classes, state.quantiles);
    let width = classes * quantiles;
    let mut grad_logits = vec![T::zero(); classes];
    softmax_vjp(output, grad, &mut grad_logits);
    let features = state.features();
    let mut grad_w = Vec::with_capacity(classes * width);
    for &gl in &grad_logits {
        grad_w.extend(features.iter().map(|&f| gl * f));
    }
    // ∂L/∂vec(Z) = Wᵀ · ∂L/∂logits
    let mut grad_features = vec![T::zero(); width];
    for (row, &gl) in head.weights.data().chunks_exact(width).zip(&grad_logits) {
        for (gf, &w) in grad_features.iter_mut().zip(row) {
            *gf += w * gl;
        }
    }
    let mut grad_probs = grid.zeros_like();
    for c in 0..classes {
        for q in 0..quantiles {
            let instance = state.achiever[q * classes + c];
            grad_probs[instance * classes + c] += grad_features[c * quantiles + q];
        }
    }
    Ok(QuantileGrads {
        probs: grid.grad_tensor(grad_probs),
        weights: Tensor::new(head.weights.shape(), grad_w)?,
        bias: Tensor::new(&[classes], grad_logits)?,
    })
}
