//! Isotonic calibration by pool-adjacent-violators.

use serde::{Deserialize, Serialize};

use crate::data::DataSet;
use crate::error::{AuditError, Result};
use crate::model::BinaryClassifier;

/// A non-decreasing, right-continuous step function over scores.
///
/// Block `i` covers `[breakpoints[i], breakpoints[i + 1])`; scores below the
/// first breakpoint take the first value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationMap {
    pub breakpoints: Vec<f64>,
    pub fitted: Vec<f64>,
}

impl CalibrationMap {
    pub fn apply(&self, score: f64) -> f64 {
        let idx = self.breakpoints.partition_point(|b| *b <= score);
        self.fitted[idx.saturating_sub(1)]
    }

    pub fn n_blocks(&self) -> usize {
        self.fitted.len()
    }
}

pub fn apply_map(m: &CalibrationMap, score: f64) -> f64 {
    m.apply(score)
}

struct Block {
    start: f64,
    end: f64,
    sum: f64,
    weight: f64,
}

impl Block {
    fn mean(&self) -> f64 {
        self.sum / self.weight
    }
}

/// Weighted least-squares monotone fit of real targets ordered by score.
/// Equal scores are pooled into one block before the violator pass.
pub fn fit_isotonic_values(scores: &[f64], targets: &[f64], weights: Option<&[f64]>) -> Result<CalibrationMap> {
    if scores.len() != targets.len() {
        return Err(AuditError::domain("scores and targets differ in length"));
    }
    if scores.is_empty() {
        return Err(AuditError::domain("isotonic fit needs at least one point"));
    }
    if scores.iter().chain(targets).any(|v| !v.is_finite()) {
        return Err(AuditError::domain("isotonic fit inputs must be finite"));
    }
    if let Some(w) = weights {
        if w.len() != scores.len() || w.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
            return Err(AuditError::domain("isotonic weights must be positive, one per point"));
        }
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]).then(a.cmp(&b)));

    let mut blocks: Vec<Block> = Vec::with_capacity(scores.len());
    for i in order {
        let w = weights.map_or(1.0, |w| w[i]);
        match blocks.last_mut() {
            Some(last) if last.end == scores[i] => {
                last.sum += w * targets[i];
                last.weight += w;
            }
            _ => blocks.push(Block {
                start: scores[i],
                end: scores[i],
                sum: w * targets[i],
                weight: w,
            }),
        }
        // restore monotonicity by pooling backwards
        while blocks.len() >= 2 {
            let n = blocks.len();
            if blocks[n - 2].mean() <= blocks[n - 1].mean() {
                break;
            }
            let top = blocks.pop().expect("two blocks");
            let prev = blocks.last_mut().expect("two blocks");
            prev.end = top.end;
            prev.sum += top.sum;
            prev.weight += top.weight;
        }
    }
    Ok(CalibrationMap {
        breakpoints: blocks.iter().map(|b| b.start).collect(),
        fitted: blocks.iter().map(Block::mean).collect(),
    })
}

/// Isotonic fit of binary labels against scores.
pub fn fit_isotonic(scores: &[f64], labels: &[u8]) -> Result<CalibrationMap> {
    if scores.len() != labels.len() {
        return Err(AuditError::domain("scores and labels differ in length"));
    }
    if labels.iter().any(|&y| y > 1) {
        return Err(AuditError::domain("labels must be 0 or 1"));
    }
    let targets: Vec<f64> = labels.iter().map(|&y| f64::from(y)).collect();
    fit_isotonic_values(scores, &targets, None)
}

/// A classifier whose scores pass through a calibration map; the threshold is kept.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibrated<C> {
    pub inner: C,
    pub map: CalibrationMap,
}

impl<C: BinaryClassifier> BinaryClassifier for Calibrated<C> {
    fn score(&self, x: &[f64]) -> Result<f64> {
        Ok(self.map.apply(self.inner.score(x)?))
    }

    fn threshold(&self) -> f64 {
        self.inner.threshold()
    }
}

/// Fits an isotonic map on `validation` scores and wraps `f` with it.
pub fn calibrate_classifier<C: BinaryClassifier>(f: C, validation: &DataSet) -> Result<Calibrated<C>> {
    if validation.len() < 2 {
        return Err(AuditError::domain("calibration needs at least two validation samples"));
    }
    let scores = f.score_all(validation)?;
    let map = fit_isotonic(&scores, &validation.labels())?;
    Ok(Calibrated { inner: f, map })
}
