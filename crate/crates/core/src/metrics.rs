//! AUROC / FPR95 with "higher score = more OOD" orientation, and report
//! assembly.

use alloc::string::String;
use alloc::vec::Vec;
use core::cmp::Ordering;

use crate::{Error, Result};

fn check_scores(scores: &[f64]) -> Result<()> {
    if scores.is_empty() {
        return Err(Error::EmptyInput);
    }
    if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
        return Err(Error::NonFiniteScore(i));
    }
    Ok(())
}

/// Probability that a random OOD score exceeds a random ID score, ties
/// counting one half (Mann-Whitney U), in `O(n log n)`.
pub fn auroc(id_scores: &[f64], ood_scores: &[f64]) -> Result<f64> {
    check_scores(id_scores)?;
    check_scores(ood_scores)?;
    let mut id = id_scores.to_vec();
    let mut ood = ood_scores.to_vec();
    id.sort_unstable_by(f64::total_cmp);
    ood.sort_unstable_by(f64::total_cmp);

    // twice the U statistic, kept integral
    let mut twice_u: u128 = 0;
    let mut i = 0usize;
    let mut j = 0usize;
    while j < ood.len() {
        let v = ood[j];
        while i < id.len() && id[i] < v {
            i += 1;
        }
        let below = i;
        let mut ties = 0usize;
        while i + ties < id.len() && id[i + ties] == v {
            ties += 1;
        }
        let mut group = 0usize;
        while j < ood.len() && ood[j] == v {
            group += 1;
            j += 1;
        }
        twice_u += (group as u128) * (2 * below as u128 + ties as u128);
    }
    Ok(twice_u as f64 / (2.0 * id.len() as f64 * ood.len() as f64))
}

/// Smallest ID score threshold accepting at least 95% of ID samples as ID
/// (`score <= tau`): the `ceil(0.95 n)`-th order statistic, no interpolation.
pub fn fpr95_threshold(id_scores: &[f64]) -> Result<f64> {
    check_scores(id_scores)?;
    let mut id = id_scores.to_vec();
    id.sort_unstable_by(f64::total_cmp);
    let n = id.len();
    Ok(id[(95 * n).div_ceil(100) - 1])
}

/// Fraction of OOD samples accepted as ID at the 95%-TPR threshold.
pub fn fpr95(id_scores: &[f64], ood_scores: &[f64]) -> Result<f64> {
    check_scores(ood_scores)?;
    if id_scores.len() < 20 {
        log::warn!(
            "fpr95 with only {} ID samples; the 95% threshold is coarse",
            id_scores.len()
        );
    }
    let tau = fpr95_threshold(id_scores)?;
    let accepted = ood_scores
        .iter()
        .filter(|s| s.total_cmp(&tau) != Ordering::Greater)
        .count();
    Ok(accepted as f64 / ood_scores.len() as f64)
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct DatasetMetrics {
    pub name: String,
    pub auroc: f64,
    pub fpr95: f64,
    pub n_id: usize,
    pub n_ood: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct AverageMetrics {
    pub auroc: f64,
    pub fpr95: f64,
}

/// Per-OOD-dataset metrics against shared ID scores plus unweighted means.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct EvalReport {
    pub metric: String,
    pub p: f64,
    pub datasets: Vec<DatasetMetrics>,
    pub average: AverageMetrics,
}

pub fn evaluate_scores<'a>(
    metric: impl Into<String>,
    p: f64,
    id_scores: &[f64],
    ood: impl IntoIterator<Item = (&'a str, &'a [f64])>,
) -> Result<EvalReport> {
    let datasets = ood
        .into_iter()
        .map(|(name, scores)| {
            Ok(DatasetMetrics {
                name: name.into(),
                auroc: auroc(id_scores, scores)?,
                fpr95: fpr95(id_scores, scores)?,
                n_id: id_scores.len(),
                n_ood: scores.len(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    if datasets.is_empty() {
        return Err(Error::EmptyInput);
    }
    let k = datasets.len() as f64;
    let average = AverageMetrics {
        auroc: datasets.iter().map(|d| d.auroc).sum::<f64>() / k,
        fpr95: datasets.iter().map(|d| d.fpr95).sum::<f64>() / k,
    };
    Ok(EvalReport {
        metric: metric.into(),
        p,
        datasets,
        average,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn auroc_examples() {
        assert_eq!(auroc(&[0.0, 0.0], &[1.0, 1.0]).unwrap(), 1.0);
        assert_eq!(auroc(&[2.0, 2.0, 2.0], &[2.0, 2.0]).unwrap(), 0.5);
        assert_eq!(auroc(&[0.1, 0.4], &[0.3, 0.9]).unwrap(), 0.75);
        assert_eq!(auroc(&[], &[1.0]), Err(Error::EmptyInput));
        assert_eq!(auroc(&[f64::NAN], &[1.0]), Err(Error::NonFiniteScore(0)));
    }

    #[test]
    fn fpr95_examples() {
        let id: Vec<f64> = (1..=100).map(f64::from).collect();
        assert_eq!(fpr95_threshold(&id).unwrap(), 95.0);
        assert_eq!(fpr95(&id, &[50.0, 96.0]).unwrap(), 0.5);
        assert_eq!(fpr95(&id, &[101.0, 200.0]).unwrap(), 0.0);
        assert_eq!(fpr95(&id, &[1.0, -3.0]).unwrap(), 1.0);
    }

    #[test]
    fn report_shape() {
        let id = [0.1, 0.2, 0.3];
        let a = [0.5, 0.6];
        let r = evaluate_scores("epd", 0.15, &id, [("a", &a[..]), ("b", &a[..])]).unwrap();
        assert_eq!(r.datasets.len(), 2);
        assert_eq!(r.datasets[0].auroc, r.datasets[1].auroc);
        assert_eq!(r.average.auroc, 1.0);
        assert_eq!(r.datasets[0].n_ood, 2);
    }
}
