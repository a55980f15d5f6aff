//! Helpers shared by the unit, integration and acceptance tests.

use rand::Rng;

use crate::tensor::Tensor;

/// Step used by every finite-difference check.
pub const FD_STEP: f64 = 1e-5;

pub fn random_tensor<R: Rng>(shape: &[usize], rng: &mut R) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0))
}

/// Central differences of a scalar function, one coordinate at a time.
pub fn central_difference(x: &Tensor<f64>, f: impl Fn(&Tensor<f64>) -> f64) -> Tensor<f64> {
    let mut probe = x.clone();
    let grad = (0..x.len())
        .map(|i| {
            let orig = probe.data()[i];
            probe.data_mut()[i] = orig + FD_STEP;
            let up = f(&probe);
            probe.data_mut()[i] = orig - FD_STEP;
            let down = f(&probe);
            probe.data_mut()[i] = orig;
            (up - down) / (2.0 * FD_STEP)
        })
        .collect();
    Tensor::new(x.shape(), grad).expect("same shape")
}
