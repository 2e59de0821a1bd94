//! Binary classifier contract and the L2-regularised logistic regression
//! reference model, fitted by full-batch gradient descent on z-scored features.

use serde::{Deserialize, Serialize};

use crate::data::DataSet;
use crate::error::{AuditError, Result};

pub const DEFAULT_THRESHOLD: f64 = 0.5;

/// A scorer `f: x -> [0, 1]` with a decision threshold `t`.
pub trait BinaryClassifier: Send + Sync {
    fn score(&self, x: &[f64]) -> Result<f64>;

    fn threshold(&self) -> f64;

    /// `1` iff `score(x) >= t`.
    fn predict_label(&self, x: &[f64]) -> Result<u8> {
        Ok(u8::from(self.score(x)? >= self.threshold()))
    }

    fn score_all(&self, d: &DataSet) -> Result<Vec<f64>> {
        d.iter().map(|s| self.score(&s.features)).collect()
    }
}

impl<C: BinaryClassifier + ?Sized> BinaryClassifier for &C {
    fn score(&self, x: &[f64]) -> Result<f64> {
        (**self).score(x)
    }
    fn threshold(&self) -> f64 {
        (**self).threshold()
    }
}

impl<C: BinaryClassifier + ?Sized> BinaryClassifier for Box<C> {
    fn score(&self, x: &[f64]) -> Result<f64> {
        (**self).score(x)
    }
    fn threshold(&self) -> f64 {
        (**self).threshold()
    }
}

/// Produces a fitted classifier from a training set. Implementations must be
/// deterministic given `(train, seed)`.
pub trait Trainer: Send + Sync {
    type Model: BinaryClassifier + Clone + 'static;

    fn fit(&self, train: &DataSet, seed: u64) -> Result<Self::Model>;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LogisticHyper {
    pub l2_lambda: f64,
    pub learning_rate: f64,
    pub max_iters: usize,
    pub grad_tol: f64,
}

impl Default for LogisticHyper {
    fn default() -> Self {
        LogisticHyper {
            l2_lambda: 1e-2,
            learning_rate: 0.1,
            max_iters: 5000,
            grad_tol: 1e-7,
        }
    }
}

impl LogisticHyper {
    pub fn validate(&self) -> Result<()> {
        if !(self.l2_lambda >= 0.0 && self.l2_lambda.is_finite()) {
            return Err(AuditError::domain("l2_lambda must be a non-negative number"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(AuditError::domain("learning_rate must be positive"));
        }
        if self.max_iters == 0 {
            return Err(AuditError::domain("max_iters must be positive"));
        }
        if !(self.grad_tol > 0.0) {
            return Err(AuditError::domain("grad_tol must be positive"));
        }
        Ok(())
    }
}

pub fn sigmoid(m: f64) -> f64 {
    if m >= 0.0 {
        1.0 / (1.0 + (-m).exp())
    } else {
        let e = m.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^m)` without overflow.
fn softplus(m: f64) -> f64 {
    m.max(0.0) + (-m.abs()).exp().ln_1p()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticModel {
    pub weights: Vec<f64>,
    pub intercept: f64,
    pub feature_means: Vec<f64>,
    pub feature_stds: Vec<f64>,
    pub hyper: LogisticHyper,
    pub threshold: f64,
    /// Gradient steps taken; 0 for an intercept-only fit.
    pub iterations: usize,
    pub converged: bool,
}

impl LogisticModel {
    /// Assembles a model from explicit parameters (used for audits and tests).
    pub fn from_parts(
        weights: Vec<f64>,
        intercept: f64,
        feature_means: Vec<f64>,
        feature_stds: Vec<f64>,
        threshold: f64,
    ) -> Result<Self> {
        let d = weights.len();
        if feature_means.len() != d || feature_stds.len() != d {
            return Err(AuditError::domain("weights and standardisation statistics differ in length"));
        }
        if feature_stds.iter().any(|s| !(*s > 0.0)) {
            return Err(AuditError::domain("feature stds must be strictly positive"));
        }
        check_threshold(threshold)?;
        Ok(LogisticModel {
            weights,
            intercept,
            feature_means,
            feature_stds,
            hyper: LogisticHyper::default(),
            threshold,
            iterations: 0,
            converged: true,
        })
    }

    pub fn dim(&self) -> usize {
        self.weights.len()
    }

    /// The linear score `w·z + b` on the standardised input.
    pub fn margin(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.dim() {
            return Err(AuditError::domain(format!(
                "expected {} features, got {}",
                self.dim(),
                x.len()
            )));
        }
        let mut m = self.intercept;
        for j in 0..x.len() {
            m += self.weights[j] * (x[j] - self.feature_means[j]) / self.feature_stds[j];
        }
        Ok(m)
    }

    pub fn predict_proba(&self, x: &[f64]) -> Result<f64> {
        Ok(sigmoid(self.margin(x)?))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

impl BinaryClassifier for LogisticModel {
    fn score(&self, x: &[f64]) -> Result<f64> {
        self.predict_proba(x)
    }

    fn threshold(&self) -> f64 {
        self.threshold
    }
}

fn check_threshold(t: f64) -> Result<()> {
    if t > 0.0 && t < 1.0 {
        Ok(())
    } else {
        Err(AuditError::domain(format!("threshold must lie in (0, 1), got {t}")))
    }
}

/// Weighted mean log-loss plus `(λ/2)‖w‖²` over a standardised design matrix.
/// Parameters are laid out as `[w_0, .., w_{d-1}, b]`; the intercept is not
/// penalised.
#[derive(Debug, Clone)]
pub struct LogisticObjective {
    /// Row-major `n × d` standardised features.
    z: Vec<f64>,
    y: Vec<f64>,
    /// Sample weights normalised to sum to one.
    w: Vec<f64>,
    d: usize,
    l2: f64,
}

impl LogisticObjective {
    pub fn new(z: Vec<f64>, y: Vec<f64>, weights: Option<&[f64]>, d: usize, l2: f64) -> Result<Self> {
        let n = y.len();
        if n == 0 || z.len() != n * d {
            return Err(AuditError::domain("design matrix does not match label count"));
        }
        let w = match weights {
            Some(w) => {
                if w.len() != n || w.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
                    return Err(AuditError::domain("sample weights must be finite and non-negative"));
                }
                let total: f64 = w.iter().sum();
                if !(total > 0.0) {
                    return Err(AuditError::domain("sample weights sum to zero"));
                }
                w.iter().map(|v| v / total).collect()
            }
            None => vec![1.0 / n as f64; n],
        };
        Ok(LogisticObjective { z, y, w, d, l2 })
    }

    pub fn n_params(&self) -> usize {
        self.d + 1
    }

    fn margins(&self, params: &[f64]) -> Vec<f64> {
        let b = params[self.d];
        self.z
            .chunks_exact(self.d)
            .map(|row| b + row.iter().zip(params).map(|(a, c)| a * c).sum::<f64>())
            .collect()
    }

    pub fn value(&self, params: &[f64]) -> f64 {
        let loss: f64 = self
            .margins(params)
            .iter()
            .zip(&self.y)
            .zip(&self.w)
            .map(|((m, y), w)| w * (softplus(*m) - y * m))
            .sum();
        let reg: f64 = params[..self.d].iter().map(|v| v * v).sum();
        loss + 0.5 * self.l2 * reg
    }

    pub fn gradient(&self, params: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; self.d + 1];
        for ((row, m), (y, w)) in self.z.chunks_exact(self.d).zip(self.margins(params)).zip(self.y.iter().zip(&self.w)) {
            let r = w * (sigmoid(m) - y);
            for (gj, zj) in g.iter_mut().zip(row) {
                *gj += r * zj;
            }
            g[self.d] += r;
        }
        for j in 0..self.d {
            g[j] += self.l2 * params[j];
        }
        g
    }

    /// Upper bound on the Lipschitz constant of the gradient:
    /// `0.25 · tr(Xᵀ W X) + λ`, with the intercept column included in `X`.
    pub fn lipschitz_bound(&self) -> f64 {
        let trace: f64 = self
            .z
            .chunks_exact(self.d)
            .zip(&self.w)
            .map(|(row, w)| w * (1.0 + row.iter().map(|v| v * v).sum::<f64>()))
            .sum();
        0.25 * trace + self.l2
    }
}

/// Column means and population standard deviations; zero-variance columns get std 1.
fn standardisation(rows: &[&[f64]], d: usize) -> (Vec<f64>, Vec<f64>) {
    let n = rows.len() as f64;
    let mut means = vec![0.0; d];
    for r in rows {
        for j in 0..d {
            means[j] += r[j];
        }
    }
    means.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![0.0; d];
    for r in rows {
        for j in 0..d {
            let c = r[j] - means[j];
            var[j] += c * c;
        }
    }
    let stds = var
        .iter()
        .map(|v| {
            let s = (v / n).sqrt();
            if s > 1e-12 {
                s
            } else {
                1.0
            }
        })
        .collect();
    (means, stds)
}

/// Result of a gradient-descent fit, with the optional objective trace.
#[derive(Debug, Clone)]
pub struct FitReport {
    pub model: LogisticModel,
    /// Objective value before each step and after the last one (empty unless traced).
    pub objective_trace: Vec<f64>,
    pub step_size: f64,
}

/// Fits on raw feature rows with optional sample weights.
///
/// Single-label inputs give an intercept-only model at the smoothed log-odds
/// `(n_pos + 1/2) / (n + 1)`.
pub fn fit_rows(
    rows: &[&[f64]],
    labels: &[u8],
    weights: Option<&[f64]>,
    hyper: &LogisticHyper,
    threshold: f64,
    trace: bool,
) -> Result<FitReport> {
    hyper.validate()?;
    check_threshold(threshold)?;
    if rows.is_empty() {
        return Err(AuditError::domain("cannot fit a model on an empty training set"));
    }
    if rows.len() != labels.len() {
        return Err(AuditError::domain("feature rows and labels differ in length"));
    }
    let d = rows[0].len();
    if d == 0 || rows.iter().any(|r| r.len() != d) {
        return Err(AuditError::domain("feature rows must share a positive dimension"));
    }
    let (means, stds) = standardisation(rows, d);
    let n_pos = labels.iter().filter(|&&y| y == 1).count();
    if n_pos == 0 || n_pos == labels.len() {
        let p = (n_pos as f64 + 0.5) / (labels.len() as f64 + 1.0);
        let model = LogisticModel {
            weights: vec![0.0; d],
            intercept: (p / (1.0 - p)).ln(),
            feature_means: means,
            feature_stds: stds,
            hyper: *hyper,
            threshold,
            iterations: 0,
            converged: true,
        };
        return Ok(FitReport {
            model,
            objective_trace: Vec::new(),
            step_size: 0.0,
        });
    }

    let mut z = Vec::with_capacity(rows.len() * d);
    for r in rows {
        for j in 0..d {
            z.push((r[j] - means[j]) / stds[j]);
        }
    }
    let y: Vec<f64> = labels.iter().map(|&v| f64::from(v)).collect();
    let objective = LogisticObjective::new(z, y, weights, d, hyper.l2_lambda)?;
    let step = hyper.learning_rate.min(1.0 / objective.lipschitz_bound());

    let mut params = vec![0.0; d + 1];
    let mut history = Vec::new();
    let mut iterations = 0;
    let mut converged = false;
    while iterations < hyper.max_iters {
        let g = objective.gradient(&params);
        if g.iter().fold(0.0f64, |m, v| m.max(v.abs())) < hyper.grad_tol {
            converged = true;
            break;
        }
        if trace {
            history.push(objective.value(&params));
        }
        for (p, gj) in params.iter_mut().zip(&g) {
            *p -= step * gj;
        }
        iterations += 1;
    }
    if trace {
        history.push(objective.value(&params));
    }
    let intercept = params.pop().expect("intercept");
    Ok(FitReport {
        model: LogisticModel {
            weights: params,
            intercept,
            feature_means: means,
            feature_stds: stds,
            hyper: *hyper,
            threshold,
            iterations,
            converged,
        },
        objective_trace: history,
        step_size: step,
    })
}

/// Fits the reference model on a dataset at the default threshold.
pub fn fit_logistic(train: &DataSet, hyper: &LogisticHyper, _seed: u64) -> Result<LogisticModel> {
    fit_logistic_with_threshold(train, hyper, DEFAULT_THRESHOLD)
}

pub fn fit_logistic_with_threshold(train: &DataSet, hyper: &LogisticHyper, threshold: f64) -> Result<LogisticModel> {
    let rows: Vec<&[f64]> = train.iter().map(|s| s.features.as_slice()).collect();
    Ok(fit_rows(&rows, &train.labels(), None, hyper, threshold, false)?.model)
}

/// The logistic reference model as a [`Trainer`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogisticTrainer {
    pub hyper: LogisticHyper,
    pub threshold: f64,
}

impl Default for LogisticTrainer {
    fn default() -> Self {
        LogisticTrainer {
            hyper: LogisticHyper::default(),
            threshold: DEFAULT_THRESHOLD,
        }
    }
}

impl Trainer for LogisticTrainer {
    type Model = LogisticModel;

    fn fit(&self, train: &DataSet, _seed: u64) -> Result<LogisticModel> {
        fit_logistic_with_threshold(train, &self.hyper, self.threshold)
    }
}

/// `1` iff `m.score(x) >= m.threshold()`.
pub fn predict_label<C: BinaryClassifier + ?Sized>(m: &C, x: &[f64]) -> Result<u8> {
    m.predict_label(x)
}
