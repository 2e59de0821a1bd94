//! Subgroup accuracy, AUC and mean discrepancy, plus Pearson correlation with a
//! permutation p-value.
//!
//! AUC counts a (negative, positive) pair only when the positive scores
//! strictly higher; ties contribute 0.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::DataSet;
use crate::error::{AuditError, Result};
use crate::model::BinaryClassifier;
use crate::seeding::{self, Label};

/// Metrics for one slice of a test set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SliceMetrics {
    pub accuracy: f64,
    pub auc: Option<f64>,
    pub mean_discrepancy: f64,
    pub n: usize,
    pub n_pos: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub overall: SliceMetrics,
    pub subgroups: BTreeMap<String, SliceMetrics>,
}

impl MetricRecord {
    /// Entry for a subgroup token, or the overall entry for `"overall"`.
    pub fn slice(&self, key: &str) -> Option<&SliceMetrics> {
        if key == OVERALL {
            Some(&self.overall)
        } else {
            self.subgroups.get(key)
        }
    }

    pub fn entries(&self) -> impl Iterator<Item = (&str, &SliceMetrics)> {
        std::iter::once((OVERALL, &self.overall)).chain(self.subgroups.iter().map(|(k, v)| (k.as_str(), v)))
    }
}

/// Key used for the whole-test-set entry wherever slices are named.
pub const OVERALL: &str = "overall";

/// Fraction of hard predictions `1[s ≥ t]` that equal the labels.
pub fn accuracy_from_scores(scores: &[f64], labels: &[u8], t: f64) -> Result<f64> {
    check_pair(scores, labels)?;
    let hits = scores
        .iter()
        .zip(labels)
        .filter(|(s, y)| u8::from(**s >= t) == **y)
        .count();
    Ok(hits as f64 / scores.len() as f64)
}

/// `|Σ (1[s ≥ t] − y)| / n`.
pub fn discrepancy_from_scores(scores: &[f64], labels: &[u8], t: f64) -> Result<f64> {
    check_pair(scores, labels)?;
    let net: i64 = scores
        .iter()
        .zip(labels)
        .map(|(s, y)| i64::from(*s >= t) - i64::from(*y))
        .sum();
    Ok(net.unsigned_abs() as f64 / scores.len() as f64)
}

/// Fraction of (negative, positive) pairs where the positive scores strictly
/// higher. `None` when either class is empty.
pub fn auc_from_scores(scores: &[f64], labels: &[u8]) -> Option<f64> {
    if scores.len() != labels.len() {
        return None;
    }
    let mut negatives: Vec<f64> = scores.iter().zip(labels).filter(|(_, y)| **y == 0).map(|(s, _)| *s).collect();
    let n_neg = negatives.len();
    let n_pos = scores.len() - n_neg;
    if n_neg == 0 || n_pos == 0 {
        return None;
    }
    negatives.sort_by(f64::total_cmp);
    let wins: u64 = scores
        .iter()
        .zip(labels)
        .filter(|(_, y)| **y == 1)
        .map(|(s, _)| negatives.partition_point(|v| v < s) as u64)
        .sum();
    Some(wins as f64 / (n_neg as f64 * n_pos as f64))
}

fn check_pair(scores: &[f64], labels: &[u8]) -> Result<()> {
    if scores.is_empty() {
        return Err(AuditError::domain("metric over an empty slice is undefined"));
    }
    if scores.len() != labels.len() {
        return Err(AuditError::domain("scores and labels differ in length"));
    }
    Ok(())
}

fn slice_metrics(scores: &[f64], labels: &[u8], t: f64) -> Result<SliceMetrics> {
    Ok(SliceMetrics {
        accuracy: accuracy_from_scores(scores, labels, t)?,
        auc: auc_from_scores(scores, labels),
        mean_discrepancy: discrepancy_from_scores(scores, labels, t)?,
        n: scores.len(),
        n_pos: labels.iter().filter(|&&y| y == 1).count(),
    })
}

pub fn subgroup_accuracy<C: BinaryClassifier + ?Sized>(f: &C, test: &DataSet, a: &str) -> Result<f64> {
    let slice = test.subgroup_subset(a);
    if slice.is_empty() {
        return Err(AuditError::domain(format!("no test samples in subgroup `{a}`")));
    }
    accuracy_from_scores(&f.score_all(&slice)?, &slice.labels(), f.threshold())
}

pub fn subgroup_auc<C: BinaryClassifier + ?Sized>(f: &C, test: &DataSet, a: &str) -> Result<Option<f64>> {
    let slice = test.subgroup_subset(a);
    Ok(auc_from_scores(&f.score_all(&slice)?, &slice.labels()))
}

pub fn mean_discrepancy<C: BinaryClassifier + ?Sized>(f: &C, d: &DataSet) -> Result<f64> {
    if d.is_empty() {
        return Err(AuditError::domain("mean discrepancy of an empty set is undefined"));
    }
    discrepancy_from_scores(&f.score_all(d)?, &d.labels(), f.threshold())
}

/// Evaluates precomputed scores: an overall entry plus one per subgroup present.
pub fn evaluate_scores(test: &DataSet, scores: &[f64], t: f64) -> Result<MetricRecord> {
    if test.is_empty() {
        return Err(AuditError::domain("cannot evaluate on an empty test set"));
    }
    if scores.len() != test.len() {
        return Err(AuditError::domain("one score per test sample is required"));
    }
    let labels = test.labels();
    let overall = slice_metrics(scores, &labels, t)?;
    let mut groups: BTreeMap<&str, (Vec<f64>, Vec<u8>)> = BTreeMap::new();
    for ((s, score), y) in test.iter().zip(scores).zip(&labels) {
        let e = groups.entry(s.subgroup.as_str()).or_default();
        e.0.push(*score);
        e.1.push(*y);
    }
    let subgroups = groups
        .into_iter()
        .map(|(k, (s, y))| Ok((k.to_string(), slice_metrics(&s, &y, t)?)))
        .collect::<Result<_>>()?;
    Ok(MetricRecord { overall, subgroups })
}

pub fn evaluate<C: BinaryClassifier + ?Sized>(f: &C, test: &DataSet) -> Result<MetricRecord> {
    if test.is_empty() {
        return Err(AuditError::domain("cannot evaluate on an empty test set"));
    }
    evaluate_scores(test, &f.score_all(test)?, f.threshold())
}

/// Pearson r and a two-sided permutation p-value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Correlation {
    pub r: f64,
    pub p: f64,
    pub n: usize,
    pub permutations: usize,
}

pub const DEFAULT_PERMUTATIONS: usize = 10_000;

fn pearson_centered(xc: &[f64], yc: &[f64], sxx: f64, syy: f64) -> f64 {
    let sxy: f64 = xc.iter().zip(yc).map(|(a, b)| a * b).sum();
    (sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0)
}

fn center(v: &[f64]) -> (Vec<f64>, f64) {
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    let c: Vec<f64> = v.iter().map(|x| x - mean).collect();
    let ss = c.iter().map(|x| x * x).sum();
    (c, ss)
}

/// Sample Pearson correlation with `p = (1 + #{|r_π| ≥ |r|}) / (B + 1)` over
/// `B` seeded permutations of `ys`.
pub fn pearson_r(xs: &[f64], ys: &[f64], permutations: usize, seed: u64) -> Result<Correlation> {
    if xs.len() != ys.len() {
        return Err(AuditError::domain("correlation inputs differ in length"));
    }
    if xs.len() < 3 {
        return Err(AuditError::domain("correlation needs at least 3 points"));
    }
    if xs.iter().chain(ys).any(|v| !v.is_finite()) {
        return Err(AuditError::domain("correlation inputs must be finite"));
    }
    let (xc, sxx) = center(xs);
    let (mut yc, syy) = center(ys);
    if sxx <= 0.0 || syy <= 0.0 || xs.iter().all(|v| *v == xs[0]) || ys.iter().all(|v| *v == ys[0]) {
        return Err(AuditError::domain("correlation is undefined for a constant input"));
    }
    let r = pearson_centered(&xc, &yc, sxx, syy);
    // slack so that permutations reproducing |r| up to rounding count as extreme
    let bar = r.abs() - 1e-12;
    let mut rng = seeding::stream(seed, &[Label::Str("pearson")]);
    let mut extreme = 0usize;
    for _ in 0..permutations {
        yc.shuffle(&mut rng);
        if pearson_centered(&xc, &yc, sxx, syy).abs() >= bar {
            extreme += 1;
        }
    }
    Ok(Correlation {
        r,
        p: (1 + extreme) as f64 / (permutations + 1) as f64,
        n: xs.len(),
        permutations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::LabeledSample;
    use rand::Rng;

    /// Scores a sample by its first feature.
    struct FirstFeature(f64);
    impl BinaryClassifier for FirstFeature {
        fn score(&self, x: &[f64]) -> Result<f64> {
            Ok(x[0])
        }
        fn threshold(&self) -> f64 {
            self.0
        }
    }

    fn data(scores: &[f64], labels: &[u8], sub: &str) -> DataSet {
        let samples = scores
            .iter()
            .zip(labels)
            .map(|(s, y)| LabeledSample::new(vec![*s], *y, sub, "s").unwrap())
            .collect();
        DataSet::new(samples, 1).unwrap()
    }

    #[test]
    fn accuracy_examples() {
        let d = data(&[0.9, 0.2, 0.4, 0.8, 0.6], &[1, 0, 1, 1, 0], "a");
        assert!((subgroup_accuracy(&FirstFeature(0.5), &d, "a").unwrap() - 0.6).abs() < 1e-15);
        let perfect = data(&[1.0, 0.0, 1.0], &[1, 0, 1], "a");
        assert_eq!(subgroup_accuracy(&FirstFeature(0.5), &perfect, "a").unwrap(), 1.0);
        let labels: Vec<u8> = (0..10).map(|i| u8::from(i < 3)).collect();
        let zero = data(&[0.0; 10], &labels, "a");
        assert!((subgroup_accuracy(&FirstFeature(0.5), &zero, "a").unwrap() - 0.7).abs() < 1e-15);
        assert!(subgroup_accuracy(&FirstFeature(0.5), &zero, "b").is_err());
    }

    #[test]
    fn auc_examples() {
        let d = data(&[0.4, 0.9, 0.2], &[0, 1, 1], "a");
        assert_eq!(subgroup_auc(&FirstFeature(0.5), &d, "a").unwrap(), Some(0.5));
        let sep = data(&[0.1, 0.2, 0.8, 0.9], &[0, 0, 1, 1], "a");
        assert_eq!(subgroup_auc(&FirstFeature(0.5), &sep, "a").unwrap(), Some(1.0));
        let pos = data(&[0.1, 0.9], &[1, 1], "a");
        assert_eq!(subgroup_auc(&FirstFeature(0.5), &pos, "a").unwrap(), None);
        // ties count zero
        assert_eq!(auc_from_scores(&[0.5, 0.5], &[0, 1]), Some(0.0));
    }

    #[test]
    fn discrepancy_examples() {
        let d = data(&[1.0, 1.0, 0.0, 1.0, 0.0], &[0, 1, 0, 1, 0], "a");
        assert!((mean_discrepancy(&FirstFeature(0.5), &d).unwrap() - 0.2).abs() < 1e-15);
        let labels: Vec<u8> = (0..10).map(|i| u8::from(i < 3)).collect();
        let ones = data(&[1.0; 10], &labels, "a");
        assert!((mean_discrepancy(&FirstFeature(0.5), &ones).unwrap() - 0.7).abs() < 1e-15);
        let perfect = data(&[1.0, 0.0], &[1, 0], "a");
        assert_eq!(mean_discrepancy(&FirstFeature(0.5), &perfect).unwrap(), 0.0);
        assert!(mean_discrepancy(&FirstFeature(0.5), &DataSet::empty(1).unwrap()).is_err());
    }

    #[test]
    fn evaluate_single_subgroup_matches_overall() {
        let d = data(&[0.9, 0.2, 0.4, 0.8, 0.6], &[1, 0, 1, 1, 0], "a");
        let rec = evaluate(&FirstFeature(0.5), &d).unwrap();
        assert_eq!(rec.subgroups.len(), 1);
        assert_eq!(rec.subgroups["a"], rec.overall);
        assert!(evaluate(&FirstFeature(0.5), &DataSet::empty(1).unwrap()).is_err());
    }

    #[test]
    fn evaluate_auc_matches_pairwise_count() {
        let mut rng = seeding::stream(5, &[]);
        let scores: Vec<f64> = (0..50).map(|_| (rng.random::<f64>() * 10.0).floor() / 10.0).collect();
        let labels: Vec<u8> = (0..50).map(|_| u8::from(rng.random::<f64>() < 0.4)).collect();
        let d = data(&scores, &labels, "a");
        let rec = evaluate(&FirstFeature(0.5), &d).unwrap();
        let mut wins = 0;
        let mut pairs = 0;
        for i in 0..50 {
            for j in 0..50 {
                if labels[i] == 0 && labels[j] == 1 {
                    pairs += 1;
                    if scores[j] > scores[i] {
                        wins += 1;
                    }
                }
            }
        }
        assert_eq!(rec.overall.auc, Some(wins as f64 / pairs as f64));
    }

    #[test]
    fn pearson_linear_cases() {
        let xs: Vec<f64> = (0..20).map(|i| i as f64 * 0.7 - 3.0).collect();
        let ys: Vec<f64> = xs.iter().map(|x| 2.0 * x + 1.0).collect();
        let c = pearson_r(&xs, &ys, 999, 1).unwrap();
        assert!((c.r - 1.0).abs() < 1e-12);
        assert!(c.p <= 1.0 / 1000.0 + 1e-15);
        let neg: Vec<f64> = xs.iter().map(|x| -x).collect();
        assert!((pearson_r(&xs, &neg, 99, 1).unwrap().r + 1.0).abs() < 1e-12);
    }

    #[test]
    fn pearson_independent_draws() {
        let mut rng = seeding::stream(77, &[]);
        let xs: Vec<f64> = (0..200).map(|_| rng.random()).collect();
        let ys: Vec<f64> = (0..200).map(|_| rng.random()).collect();
        let c = pearson_r(&xs, &ys, 2000, 3).unwrap();
        assert!(c.r.abs() < 0.2 && c.p > 0.05, "{c:?}");
    }

    #[test]
    fn pearson_errors() {
        assert!(pearson_r(&[1.0, 2.0], &[1.0, 2.0], 10, 0).is_err());
        assert!(pearson_r(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0], 10, 0).is_err());
        assert!(pearson_r(&[1.0, 2.0, 3.0], &[1.0, 2.0], 10, 0).is_err());
    }
}
