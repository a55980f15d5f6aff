use crate::agg::InstanceGrid;
use crate::tensor::{Scalar, Tensor};

/// Result of masked max pooling.
#[derive(Clone, Debug, PartialEq)]
pub struct MaxState<T> {
    /// Per-class maxima before renormalization.
    pub maxima: Vec<T>,
    /// Flat instance index achieving each maximum (lowest index on ties).
    pub argmax: Vec<usize>,
    /// Maxima renormalized to a distribution.
    pub output: Vec<T>,
}

pub fn max_agg_forward<T: Scalar>(grid: &InstanceGrid<T>) -> MaxState<T> {
    let classes = grid.classes();
    let first = grid.foreground()[0];
    let mut maxima = grid.instance(first).to_vec();
    let mut argmax = vec![first; classes];
    for &n in &grid.foreground()[1..] {
        for c in 0..classes {
            let v = grid.prob(n, c);
            if v > maxima[c] {
                maxima[c] = v;
                argmax[c] = n;
            }
        }
    }
    let total: T = maxima.iter().copied().sum();
    let output = maxima.iter().map(|&m| m / total).collect();
    MaxState {
        maxima,
        argmax,
        output,
    }
}

/// Routes the gradient through the renormalization Jacobian
/// `∂S_c/∂m_k = (δ_ck − S_c)/M` and then to each class's argmax instance.
pub fn max_agg_backward<T: Scalar>(state: &MaxState<T>, grid: &InstanceGrid<T>, grad: &[T]) -> Tensor<T> {
    let classes = grid.classes();
    let total: T = state.maxima.iter().copied().sum();
    let dot: T = grad.iter().zip(&state.output).map(|(&g, &s)| g * s).sum();
    let mut out = grid.zeros_like();
    for k in 0..classes {
        out[state.argmax[k] * classes + k] += (grad[k] - dot) / total;
    }
    grid.grad_tensor(out)
}
