use crate::error::{invalid, Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Per-instance class probabilities over the FCN output grid, together with
/// the foreground mask at grid resolution.
#[derive(Clone, Debug, PartialEq)]
pub struct InstanceGrid<T = f32> {
    probs: Tensor<T>,
    mask: Vec<bool>,
    foreground: Vec<usize>,
}

impl<T: Scalar> InstanceGrid<T> {
    /// `probs` is `h × w × C`; `mask` is `h × w` with nonzero meaning foreground.
    pub fn new(probs: Tensor<T>, mask: &Tensor<f32>) -> Result<Self> {
        if probs.rank() != 3 || mask.shape() != &probs.shape()[..2] {
            return Err(Error::ShapeMismatch {
                op: "InstanceGrid",
                left: probs.shape().to_vec(),
                right: mask.shape().to_vec(),
            });
        }
        let mask: Vec<bool> = mask.data().iter().map(|&m| m != 0.0).collect();
        Self::from_flat(probs, mask)
    }

    /// Flat instances: `probs` is `N × C` (or `h × w × C`) and `mask` has one
    /// entry per instance.
    pub fn from_flat(probs: Tensor<T>, mask: Vec<bool>) -> Result<Self> {
        let classes = *probs.shape().last().unwrap_or(&0);
        if probs.rank() < 2 || classes < 2 || probs.len() / classes != mask.len() {
            return Err(invalid(format!(
                "grid shape {:?} with {} mask entries",
                probs.shape(),
                mask.len()
            )));
        }
        probs.ensure_finite("instance grid")?;
        for (n, px) in probs.data().chunks_exact(classes).enumerate() {
            let total: T = px.iter().copied().sum();
            if (total - T::one()).abs() > T::of(1e-4) {
                return Err(invalid(format!("instance {n} sums to {total:?}")));
            }
        }
        let foreground: Vec<usize> = (0..mask.len()).filter(|&n| mask[n]).collect();
        if foreground.is_empty() {
            return Err(invalid("grid has no foreground instance"));
        }
        Ok(Self {
            probs,
            mask,
            foreground,
        })
    }

    pub fn probs(&self) -> &Tensor<T> {
        &self.probs
    }

    pub fn classes(&self) -> usize {
        *self.probs.shape().last().expect("rank checked")
    }

    /// Total instance count `N`, foreground or not.
    pub fn instances(&self) -> usize {
        self.mask.len()
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    /// Flat indices of foreground instances, ascending.
    pub fn foreground(&self) -> &[usize] {
        &self.foreground
    }

    #[inline]
    pub fn prob(&self, instance: usize, class: usize) -> T {
        self.probs.data()[instance * self.classes() + class]
    }

    pub fn instance(&self, instance: usize) -> &[T] {
        let c = self.classes();
        &self.probs.data()[instance * c..(instance + 1) * c]
    }

    pub(crate) fn zeros_like(&self) -> Vec<T> {
        vec![T::zero(); self.probs.len()]
    }

    pub(crate) fn grad_tensor(&self, data: Vec<T>) -> Tensor<T> {
        Tensor::new(self.probs.shape(), data).expect("same shape as probs")
    }
}
