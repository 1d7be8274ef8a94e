//! F1 on the euphemistic class, fold aggregation, ensembling and the paired t-test.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::classifier::decide;
use crate::error::{Error, Result};

/// F1 of class 1. Zero when there are no predicted or no actual positives.
pub fn f1(predictions: &[u8], labels: &[u8]) -> Result<f64> {
    if predictions.len() != labels.len() {
        return Err(Error::InvalidArgument(format!(
            "{} predictions for {} labels",
            predictions.len(),
            labels.len()
        )));
    }
    if predictions.is_empty() {
        return Err(Error::InvalidArgument("f1 of an empty sample".into()));
    }
    let (mut tp, mut fp, mut fn_) = (0usize, 0usize, 0usize);
    for (&p, &y) in predictions.iter().zip(labels) {
        match (p == 1, y == 1) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => {}
        }
    }
    if tp == 0 {
        return Ok(0.0);
    }
    let precision = tp as f64 / (tp + fp) as f64;
    let recall = tp as f64 / (tp + fn_) as f64;
    Ok(2.0 * precision * recall / (precision + recall))
}

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample standard deviation (n - 1); zero for fewer than two values.
pub fn sample_std(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnsembleMethod {
    /// Column mean of probabilities, then threshold.
    #[default]
    MeanProbability,
    /// Majority of per-fold thresholded labels; ties go to class 1.
    MajorityVote,
}

/// Combines a folds x examples probability matrix into one label per example.
pub fn ensemble(per_fold_probs: &[Vec<f64>], threshold: f64, method: EnsembleMethod) -> Result<Vec<u8>> {
    Ok(ensemble_probabilities(per_fold_probs, method, threshold)?
        .into_iter()
        .map(|p| decide(p, threshold))
        .collect())
}

/// Per-example combined score. For majority vote this is the fraction of
/// folds voting 1, so thresholding it at 0.5 gives the vote.
pub fn ensemble_probabilities(
    per_fold_probs: &[Vec<f64>],
    method: EnsembleMethod,
    threshold: f64,
) -> Result<Vec<f64>> {
    let first = per_fold_probs
        .first()
        .ok_or_else(|| Error::InvalidArgument("ensemble needs at least one fold".into()))?;
    let n = first.len();
    for row in per_fold_probs {
        if row.len() != n {
            return Err(Error::InvalidArgument(format!(
                "ragged probability matrix: rows of length {n} and {}",
                row.len()
            )));
        }
        if row.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::InvalidArgument("probabilities must lie in [0, 1]".into()));
        }
    }
    let folds = per_fold_probs.len() as f64;
    let mut column = Vec::with_capacity(per_fold_probs.len());
    Ok((0..n)
        .map(|j| {
            column.clear();
            column.extend(per_fold_probs.iter().map(|row| match method {
                EnsembleMethod::MeanProbability => row[j],
                EnsembleMethod::MajorityVote => f64::from(decide(row[j], threshold)),
            }));
            // fixed summation order keeps the result independent of row order
            column.sort_by(f64::total_cmp);
            compensated_sum(&column) / folds
        })
        .collect())
}

/// Neumaier-compensated sum.
pub fn compensated_sum(xs: &[f64]) -> f64 {
    let mut sum = 0.0;
    let mut carry = 0.0;
    for &x in xs {
        let t = sum + x;
        if sum.abs() >= x.abs() {
            carry += (sum - t) + x;
        } else {
            carry += (x - t) + sum;
        }
        sum = t;
    }
    sum + carry
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SignificanceResult {
    pub t_statistic: f64,
    pub p_value: f64,
    pub n_pairs: usize,
    pub two_sided: bool,
}

/// Two-sided paired t-test on `a[i] - b[i]` with `n - 1` degrees of freedom.
pub fn paired_t_test(scores_a: &[f64], scores_b: &[f64]) -> Result<SignificanceResult> {
    if scores_a.len() != scores_b.len() {
        return Err(Error::InvalidArgument(format!(
            "paired samples differ in length: {} vs {}",
            scores_a.len(),
            scores_b.len()
        )));
    }
    let n = scores_a.len();
    if n < 2 {
        return Err(Error::InvalidArgument("paired t-test needs at least two pairs".into()));
    }
    let diffs: Vec<f64> = scores_a.iter().zip(scores_b).map(|(a, b)| a - b).collect();
    let sd = sample_std(&diffs);
    if sd == 0.0 || !sd.is_finite() {
        return Err(Error::DegeneratePairedSample);
    }
    let t = mean(&diffs) / (sd / (n as f64).sqrt());
    let dist = StudentsT::new(0.0, 1.0, (n - 1) as f64)
        .map_err(|e| Error::InvalidArgument(format!("t distribution: {e}")))?;
    let p = (2.0 * dist.sf(t.abs())).clamp(0.0, 1.0);
    Ok(SignificanceResult {
        t_statistic: t,
        p_value: p,
        n_pairs: n,
        two_sided: true,
    })
}
