//! Multi-task cross entropy that ignores missing labels.

use crate::error::{invalid, Result};
use crate::tensor::{Scalar, LOG_EPS};

/// One optional class index per task; `None` marks a missing label.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct TaskLabels(pub Vec<Option<usize>>);

impl TaskLabels {
    pub fn missing(tasks: usize) -> Self {
        Self(vec![None; tasks])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn get(&self, task: usize) -> Option<usize> {
        self.0.get(task).copied().flatten()
    }

    pub fn validate(&self, task_classes: &[usize]) -> Result<()> {
        if self.0.len() != task_classes.len() {
            return Err(invalid(format!(
                "{} labels for {} tasks",
                self.0.len(),
                task_classes.len()
            )));
        }
        for (t, (label, &classes)) in self.0.iter().zip(task_classes).enumerate() {
            if let Some(l) = *label {
                if l >= classes {
                    return Err(invalid(format!(
                        "task {t}: label {l} out of range for {classes} classes"
                    )));
                }
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct LossOutput<T> {
    pub loss: T,
    /// Gradient of the loss with respect to each task's bag probabilities.
    pub grads: Vec<Vec<T>>,
}

/// `Σ_t w_t · [label present] · −ln max(p_t[label], 1e-12)`.
pub fn masked_cross_entropy<T: Scalar>(
    bag_probs: &[Vec<T>],
    labels: &TaskLabels,
    task_weights: &[f64],
) -> Result<LossOutput<T>> {
    if bag_probs.len() != labels.len() || task_weights.len() != labels.len() {
        return Err(invalid(format!(
            "{} prediction vectors, {} labels, {} weights",
            bag_probs.len(),
            labels.len(),
            task_weights.len()
        )));
    }
    let eps = T::of(LOG_EPS);
    let mut loss = T::zero();
    let mut grads = Vec::with_capacity(bag_probs.len());
    for (t, (probs, &weight)) in bag_probs.iter().zip(task_weights).enumerate() {
        if weight < 0.0 {
            return Err(invalid(format!("task {t}: negative weight {weight}")));
        }
        let total: T = probs.iter().copied().sum();
        if (total - T::one()).abs() > T::of(1e-4) {
            return Err(invalid(format!(
                "task {t}: probabilities sum to {:?}",
                total
            )));
        }
        let mut grad = vec![T::zero(); probs.len()];
        if let Some(label) = labels.0[t] {
            if label >= probs.len() {
                return Err(invalid(format!(
                    "task {t}: label {label} out of range for {} classes",
                    probs.len()
                )));
            }
            let w = T::of(weight);
            let p = probs[label];
            loss += -w * p.max(eps).ln();
            if p > eps {
                grad[label] = -w / p;
            }
        }
        grads.push(grad);
    }
    Ok(LossOutput { loss, grads })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testing::central_difference;
    use crate::tensor::Tensor;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn all_missing_is_zero() {
        let out = masked_cross_entropy(
            &[vec![0.3f64, 0.7], vec![0.2, 0.3, 0.5]],
            &TaskLabels::missing(2),
            &[1.0, 1.0],
        )
        .unwrap();
        assert_eq!(out.loss, 0.0);
        assert!(out.grads.iter().flatten().all(|&g| g == 0.0));
    }

    #[test]
    fn half_half_is_ln_two() {
        let out = masked_cross_entropy(&[vec![0.5f64, 0.5]], &TaskLabels(vec![Some(0)]), &[1.0]).unwrap();
        assert!((out.loss - 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn out_of_range_label_is_an_error() {
        assert!(masked_cross_entropy(&[vec![0.5f64, 0.5]], &TaskLabels(vec![Some(2)]), &[1.0]).is_err());
        assert!(TaskLabels(vec![Some(2)]).validate(&[2]).is_err());
        assert!(TaskLabels(vec![Some(1), None]).validate(&[2, 3]).is_ok());
    }

    #[test]
    fn additive_across_tasks() {
        let probs = vec![vec![0.2f64, 0.8], vec![0.1, 0.6, 0.3]];
        let both = masked_cross_entropy(&probs, &TaskLabels(vec![Some(1), Some(2)]), &[1.0, 2.0]).unwrap();
        let first = masked_cross_entropy(&probs, &TaskLabels(vec![Some(1), None]), &[1.0, 2.0]).unwrap();
        let second = masked_cross_entropy(&probs, &TaskLabels(vec![None, Some(2)]), &[1.0, 2.0]).unwrap();
        assert!((both.loss - first.loss - second.loss).abs() < 1e-12);
        assert!(first.grads[1].iter().all(|&g| g == 0.0));
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..20 {
            let mut probs = Vec::new();
            for classes in [2usize, 3] {
                let raw: Vec<f64> = (0..classes).map(|_| rng.gen_range(0.3..1.0)).collect();
                let total: f64 = raw.iter().sum();
                probs.push(raw.into_iter().map(|v| v / total).collect::<Vec<_>>());
            }
            let labels = TaskLabels(vec![Some(rng.gen_range(0..2)), Some(rng.gen_range(0..3))]);
            let weights = [rng.gen_range(0.5..2.0), rng.gen_range(0.5..2.0)];
            let out = masked_cross_entropy(&probs, &labels, &weights).unwrap();
            for t in 0..2 {
                let x = Tensor::new(&[probs[t].len()], probs[t].clone()).unwrap();
                let fd = central_difference(&x, |x| {
                    let mut p = probs.clone();
                    p[t] = x.data().to_vec();
                    masked_cross_entropy(&p, &labels, &weights).unwrap().loss
                });
                let g = Tensor::new(&[probs[t].len()], out.grads[t].clone()).unwrap();
                assert!(fd.max_abs_diff(&g).unwrap() < 1e-6);
            }
        }
    }
}
