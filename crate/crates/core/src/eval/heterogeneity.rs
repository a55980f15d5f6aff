use std::io::Write;

use crate::agg::{argmax, InstanceGrid};
use crate::error::{Error, Result};
use crate::tensor::Scalar;

/// Share of foreground instances whose argmax is each class.
pub fn instance_proportions<T: Scalar>(grid: &InstanceGrid<T>) -> Vec<f64> {
    let mut counts = vec![0usize; grid.classes()];
    for &i in grid.foreground() {
        counts[argmax(grid.instance(i))] += 1;
    }
    let n = grid.foreground().len() as f64;
    counts.iter().map(|&c| c as f64 / n).collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct BagProportions {
    pub predicted: Vec<f64>,
    pub label: Option<usize>,
    pub true_mixture: Option<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct HeterogeneityReport {
    pub bags: Vec<BagProportions>,
}

/// Predicted class proportions per bag, paired with the bag label and, when
/// known, the generating mixture.
pub fn heterogeneity_proportions<T: Scalar>(
    grids: &[&InstanceGrid<T>],
    labels: &[Option<usize>],
    mixtures: Option<&[Vec<f64>]>,
) -> Result<HeterogeneityReport> {
    if grids.len() != labels.len() || mixtures.is_some_and(|m| m.len() != grids.len()) {
        return Err(Error::InvalidArgument("grids, labels and mixtures differ in length".into()));
    }
    let bags = grids
        .iter()
        .enumerate()
        .map(|(i, g)| BagProportions {
            predicted: instance_proportions(g),
            label: labels[i],
            true_mixture: mixtures.map(|m| m[i].clone()),
        })
        .collect();
    Ok(HeterogeneityReport { bags })
}

/// Pearson correlation coefficient; `None` when either side is constant.
pub fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return None;
    }
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx).powi(2);
        syy += (b - my).powi(2);
    }
    (sxx > 0.0 && syy > 0.0).then(|| sxy / (sxx * syy).sqrt())
}

impl HeterogeneityReport {
    /// Pearson r between predicted and true proportions, pooled over every
    /// bag and class that has a known mixture.
    pub fn correlation_with_truth(&self) -> Option<f64> {
        let (mut x, mut y) = (Vec::new(), Vec::new());
        for bag in &self.bags {
            if let Some(truth) = &bag.true_mixture {
                x.extend_from_slice(&bag.predicted);
                y.extend_from_slice(truth);
            }
        }
        pearson(&x, &y)
    }

    /// Columns `bag,label,pred_0..,true_0..`; missing values are empty.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let classes = self.bags.first().map_or(0, |b| b.predicted.len());
        let mut out = csv::Writer::from_writer(w);
        let mut header = vec!["bag".to_string(), "label".to_string()];
        header.extend((0..classes).map(|c| format!("pred_{c}")));
        header.extend((0..classes).map(|c| format!("true_{c}")));
        out.write_record(&header)?;
        for (i, bag) in self.bags.iter().enumerate() {
            let mut rec = vec![i.to_string(), bag.label.map_or(String::new(), |l| l.to_string())];
            rec.extend(bag.predicted.iter().map(|p| p.to_string()));
            match &bag.true_mixture {
                Some(t) => rec.extend(t.iter().map(|p| p.to_string())),
                None => rec.extend((0..classes).map(|_| String::new())),
            }
            out.write_record(&rec)?;
        }
        out.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;
    use proptest::prelude::*;

    fn grid(cells: &[[f64; 2]]) -> InstanceGrid<f64> {
        let data = cells.iter().flatten().copied().collect();
        InstanceGrid::from_flat(Tensor::new(&[1, cells.len(), 2], data).unwrap(), vec![true; cells.len()]).unwrap()
    }

    #[test]
    fn all_one_class() {
        assert_eq!(instance_proportions(&grid(&[[0.9, 0.1]; 5])), vec![1.0, 0.0]);
    }

    #[test]
    fn even_split() {
        let g = grid(&[[0.9, 0.1], [0.2, 0.8], [0.6, 0.4], [0.3, 0.7]]);
        assert_eq!(instance_proportions(&g), vec![0.5, 0.5]);
    }

    #[test]
    fn background_is_ignored() {
        let t = Tensor::new(&[1, 3, 2], vec![0.9, 0.1, 0.2, 0.8, 0.2, 0.8]).unwrap();
        let g = InstanceGrid::from_flat(t, vec![true, true, false]).unwrap();
        assert_eq!(instance_proportions(&g), vec![0.5, 0.5]);
    }

    #[test]
    fn pearson_known_values() {
        assert!((pearson(&[1.0, 2.0, 3.0], &[2.0, 4.0, 6.0]).unwrap() - 1.0).abs() < 1e-12);
        assert!((pearson(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap() + 1.0).abs() < 1e-12);
        assert_eq!(pearson(&[1.0, 1.0], &[1.0, 2.0]), None);
    }

    #[test]
    fn csv_layout() {
        let g = grid(&[[0.9, 0.1], [0.2, 0.8]]);
        let report = heterogeneity_proportions(&[&g, &g], &[Some(1), None], Some(&[vec![0.4, 0.6], vec![0.5, 0.5]])).unwrap();
        let mut buf = Vec::new();
        report.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().next().unwrap(), "bag,label,pred_0,pred_1,true_0,true_1");
        assert_eq!(text.lines().nth(2).unwrap(), "1,,0.5,0.5,0.5,0.5");
        assert!(heterogeneity_proportions(&[&g], &[], None).is_err());
    }

    proptest! {
        #[test]
        fn sums_to_one_and_ignores_order(ps in prop::collection::vec(0.0f64..1.0, 1..40), seed in 0u64..1000) {
            let cells: Vec<[f64; 2]> = ps.iter().map(|&p| [p, 1.0 - p]).collect();
            let mut shuffled = cells.clone();
            use rand::{seq::SliceRandom, SeedableRng};
            shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            let a = instance_proportions(&grid(&cells));
            prop_assert!((a.iter().sum::<f64>() - 1.0).abs() < 1e-6);
            prop_assert_eq!(a, instance_proportions(&grid(&shuffled)));
        }
    }
}
