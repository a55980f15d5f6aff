use crate::error::{invalid, Result};
use crate::tensor::{Scalar, Tensor};

pub fn relu_forward<T: Scalar>(input: &Tensor<T>) -> Result<Tensor<T>> {
    input.relu()
}

/// Passes `grad_out` where the forward input was positive.
pub fn relu_backward<T: Scalar>(input: &Tensor<T>, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
    input.same_shape("relu_backward", grad_out)?;
    let data = input
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&x, &g)| if x > T::zero() { g } else { T::zero() })
        .collect();
    Tensor::new(input.shape(), data)
}

/// Softmax over the trailing (class) axis at every spatial location.
pub fn instance_softmax<T: Scalar>(logits: &Tensor<T>) -> Result<Tensor<T>> {
    logits.ensure_finite("instance_softmax")?;
    let c = *logits.shape().last().unwrap_or(&1);
    if logits.rank() < 1 || c < 2 {
        return Err(invalid(format!(
            "softmax needs at least two classes, shape {:?}",
            logits.shape()
        )));
    }
    let mut out = logits.data().to_vec();
    for px in out.chunks_exact_mut(c) {
        softmax_in_place(px);
    }
    Tensor::new(logits.shape(), out)
}

pub(crate) fn softmax_in_place<T: Scalar>(v: &mut [T]) {
    let max = v.iter().copied().fold(T::neg_infinity(), T::max);
    let mut total = T::zero();
    for x in v.iter_mut() {
        *x = (*x - max).exp();
        total += *x;
    }
    for x in v.iter_mut() {
        *x /= total;
    }
}

/// Vector-Jacobian product of softmax given its output `probs`:
/// `dz = p ⊙ (g − ⟨g, p⟩)`.
pub(crate) fn softmax_vjp<T: Scalar>(probs: &[T], grad: &[T], out: &mut [T]) {
    let dot: T = probs.iter().zip(grad).map(|(&p, &g)| p * g).sum();
    for ((o, &p), &g) in out.iter_mut().zip(probs).zip(grad) {
        *o = p * (g - dot);
    }
}

pub fn instance_softmax_backward<T: Scalar>(
    probs: &Tensor<T>,
    grad_probs: &Tensor<T>,
) -> Result<Tensor<T>> {
    probs.same_shape("instance_softmax_backward", grad_probs)?;
    let c = *probs.shape().last().unwrap_or(&1);
    let mut out = vec![T::zero(); probs.len()];
    for ((p, g), o) in probs
        .data()
        .chunks_exact(c)
        .zip(grad_probs.data().chunks_exact(c))
        .zip(out.chunks_exact_mut(c))
    {
        softmax_vjp(p, g, o);
    }
    Tensor::new(probs.shape(), out)
}
