//! Classifier-based distributional similarity ("Score XY").
//!
//! A logistic membership model is trained to tell samples of P (label 1) from
//! samples of Q (label 0), using the outcome label as an extra input feature.
//! Its mean output on held-out P samples is the similarity score: 0.5 means P
//! and Q are indistinguishable, values near 1 mean they are far apart.

use serde::{Deserialize, Serialize};

use crate::data::{DataSet, LabeledSample};
use crate::error::{AuditError, Result};
use crate::model::{fit_rows, LogisticHyper, LogisticModel, DEFAULT_THRESHOLD};
use crate::seeding::{self, Label};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainClassifier {
    /// Membership model over `(x, y)`: `d` features plus the label.
    pub model: LogisticModel,
    /// P samples that were not used for fitting.
    pub held_out: DataSet,
    pub n_p_fit: usize,
    pub n_q: usize,
}

fn membership_row(s: &LabeledSample) -> Vec<f64> {
    let mut row = Vec::with_capacity(s.features.len() + 1);
    row.extend_from_slice(&s.features);
    row.push(f64::from(s.label));
    row
}

impl DomainClassifier {
    /// Wraps an existing membership model (input dimension `d + 1`).
    pub fn from_model(model: LogisticModel, held_out: DataSet) -> Result<Self> {
        if model.dim() != held_out.feature_dim() + 1 {
            return Err(AuditError::domain("membership model must take the features plus the label"));
        }
        Ok(DomainClassifier {
            model,
            held_out,
            n_p_fit: 0,
            n_q: 0,
        })
    }

    /// `s_PQ(x, y)`.
    pub fn membership(&self, s: &LabeledSample) -> Result<f64> {
        self.model.predict_proba(&membership_row(s))
    }

    /// Score XY on this classifier's own held-out P samples.
    pub fn held_out_score(&self) -> Result<f64> {
        score_xy(self, &self.held_out)
    }
}

/// Trains `s_PQ`. P is split 50/50 (seeded) into a fitting half and a held-out
/// half; all of Q is used for fitting. P and Q are reweighted to equal total
/// mass so that 0.5 stays the indistinguishability point. With a single P
/// sample there is nothing to hold out and that sample is used for both.
pub fn fit_domain_classifier_with(p: &DataSet, q: &DataSet, seed: u64, hyper: &LogisticHyper) -> Result<DomainClassifier> {
    if p.is_empty() || q.is_empty() {
        return Err(AuditError::domain("domain classifier needs non-empty P and Q"));
    }
    if p.feature_dim() != q.feature_dim() {
        return Err(AuditError::domain("P and Q differ in feature dimension"));
    }
    let (fit_p, held_out) = if p.len() < 2 {
        (p.clone(), p.clone())
    } else {
        let idx = seeding::shuffled_indices(p.len(), seeding::derive_seed(seed, &[Label::Str("score-xy-split")]));
        let half = p.len() / 2;
        let mut fit_idx = idx[..half].to_vec();
        let mut held_idx = idx[half..].to_vec();
        fit_idx.sort_unstable();
        held_idx.sort_unstable();
        (p.select(&fit_idx), p.select(&held_idx))
    };

    let rows: Vec<Vec<f64>> = fit_p.iter().chain(q.iter()).map(membership_row).collect();
    let row_refs: Vec<&[f64]> = rows.iter().map(Vec::as_slice).collect();
    let labels: Vec<u8> = std::iter::repeat_n(1u8, fit_p.len()).chain(std::iter::repeat_n(0u8, q.len())).collect();
    let wp = 1.0 / fit_p.len() as f64;
    let wq = 1.0 / q.len() as f64;
    let weights: Vec<f64> = std::iter::repeat_n(wp, fit_p.len()).chain(std::iter::repeat_n(wq, q.len())).collect();
    let model = fit_rows(&row_refs, &labels, Some(&weights), hyper, DEFAULT_THRESHOLD, false)?.model;
    Ok(DomainClassifier {
        model,
        held_out,
        n_p_fit: fit_p.len(),
        n_q: q.len(),
    })
}

pub fn fit_domain_classifier(p: &DataSet, q: &DataSet, seed: u64) -> Result<DomainClassifier> {
    fit_domain_classifier_with(p, q, seed, &LogisticHyper::default())
}

/// Uniform empirical mean of `s_PQ(x, y)` over `p`.
pub fn score_xy(s: &DomainClassifier, p: &DataSet) -> Result<f64> {
    if p.is_empty() {
        return Err(AuditError::domain("Score XY over an empty sample is undefined"));
    }
    let mut total = 0.0;
    for sample in p {
        total += s.membership(sample)?;
    }
    Ok(total / p.len() as f64)
}

/// Score XY restricted to the `a`-slice of `p`.
pub fn subgroup_score_xy(s: &DomainClassifier, p: &DataSet, a: &str) -> Result<f64> {
    let slice = p.subgroup_subset(a);
    if slice.is_empty() {
        return Err(AuditError::domain(format!("no samples of subgroup `{a}` to score")));
    }
    score_xy(s, &slice)
}

/// Fit on (P, Q) and score on the held-out half of P.
pub fn similarity_score(p: &DataSet, q: &DataSet, seed: u64) -> Result<f64> {
    fit_domain_classifier(p, q, seed)?.held_out_score()
}
