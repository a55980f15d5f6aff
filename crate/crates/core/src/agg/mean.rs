use crate::agg::InstanceGrid;
use crate::tensor::{Scalar, Tensor};

/// `S_c = Σ m_n s_{n,c} / Σ m_n`.
pub fn mean_agg_forward<T: Scalar>(grid: &InstanceGrid<T>) -> Vec<T> {
    let classes = grid.classes();
    let mut out = vec![T::zero(); classes];
    for &n in grid.foreground() {
        for (o, &p) in out.iter_mut().zip(grid.instance(n)) {
            *o += p;
        }
    }
    let count = T::of(grid.foreground().len() as f64);
    out.iter_mut().for_each(|o| *o /= count);
    out
}

/// Each foreground instance receives `grad_S / Ñ`; background receives zero.
pub fn mean_agg_backward<T: Scalar>(grid: &InstanceGrid<T>, grad: &[T]) -> Tensor<T> {
    let classes = grid.classes();
    let count = T::of(grid.foreground().len() as f64);
    let mut out = grid.zeros_like();
    for &n in grid.foreground() {
        for (o, &g) in out[n * classes..(n + 1) * classes].iter_mut().zip(grad) {
            *o = g / count;
        }
    }
    grid.grad_tensor(out)
}
