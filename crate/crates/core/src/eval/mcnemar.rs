use statrs::distribution::{Binomial, ChiSquared, ContinuousCDF, DiscreteCDF};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum McNemarVariant {
    /// `(|b − c| − 1)² / (b + c)` against chi-square with one degree of freedom.
    #[default]
    ContinuityCorrected,
    /// Two-sided binomial test on the discordant pairs.
    Exact,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct McNemar {
    /// Cases model A gets right and model B gets wrong.
    pub b: usize,
    /// Cases model A gets wrong and model B gets right.
    pub c: usize,
    /// The chi-square statistic; also reported for the exact variant.
    pub statistic: f64,
    pub p_value: f64,
}

pub fn mcnemar_from_counts(b: usize, c: usize, variant: McNemarVariant) -> McNemar {
    let n = b + c;
    if n == 0 {
        return McNemar { b, c, statistic: 0.0, p_value: 1.0 };
    }
    let d = (b as f64 - c as f64).abs() - 1.0;
    let statistic = d * d / n as f64;
    let p_value = match variant {
        McNemarVariant::ContinuityCorrected => ChiSquared::new(1.0).expect("one degree of freedom").sf(statistic),
        McNemarVariant::Exact => {
            let binom = Binomial::new(0.5, n as u64).expect("valid binomial");
            (2.0 * binom.cdf(b.min(c) as u64)).min(1.0)
        }
    };
    McNemar { b, c, statistic, p_value }
}

/// Paired test on two prediction vectors against shared labels; missing
/// labels are skipped.
pub fn mcnemar_with(preds_a: &[usize], preds_b: &[usize], labels: &[Option<usize>], variant: McNemarVariant) -> Result<McNemar> {
    if preds_a.len() != preds_b.len() || preds_a.len() != labels.len() {
        return Err(Error::InvalidArgument(format!(
            "paired vectors differ in length: {}, {}, {}",
            preds_a.len(),
            preds_b.len(),
            labels.len()
        )));
    }
    let (mut b, mut c) = (0, 0);
    for ((&pa, &pb), label) in preds_a.iter().zip(preds_b).zip(labels) {
        let Some(l) = *label else { continue };
        match (pa == l, pb == l) {
            (true, false) => b += 1,
            (false, true) => c += 1,
            _ => {}
        }
    }
    Ok(mcnemar_from_counts(b, c, variant))
}

/// Continuity-corrected test returning `(statistic, p_value)`.
pub fn mcnemar(preds_a: &[usize], preds_b: &[usize], labels: &[Option<usize>]) -> Result<(f64, f64)> {
    let r = mcnemar_with(preds_a, preds_b, labels, McNemarVariant::ContinuityCorrected)?;
    Ok((r.statistic, r.p_value))
}
