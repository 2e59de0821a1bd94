//! Data-source selection heuristics.
//!
//! Each criterion scores every candidate source and picks the optimum; ties
//! go to the earlier source in registry order. Candidates that cannot be
//! scored are excluded and listed in `flagged` with the reason.

use indexmap::IndexMap;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{draw_fixed, subgroup_ratio, DataSet, SourceRegistry};
use crate::error::{AuditError, Result};
use crate::metrics::evaluate;
use crate::model::Trainer;
use crate::protocols::{plan_target_folds, ExperimentConfig};
use crate::seeding::{derive_seed, Label};
use crate::similarity::{fit_domain_classifier, score_xy};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Criterion {
    #[serde(alias = "max-ratio")]
    MaxRatio,
    #[serde(alias = "max-count")]
    MaxCount,
    #[serde(alias = "max-similarity")]
    MaxSimilarity,
    #[serde(alias = "min-disc-delta")]
    MinDiscDelta,
    #[serde(alias = "greedy-acc", alias = "greedy-accuracy")]
    GreedyAccuracy,
}

impl Criterion {
    pub const ALL: [Criterion; 5] = [
        Criterion::MaxRatio,
        Criterion::MaxCount,
        Criterion::MaxSimilarity,
        Criterion::MinDiscDelta,
        Criterion::GreedyAccuracy,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Criterion::MaxRatio => "max_ratio",
            Criterion::MaxCount => "max_count",
            Criterion::MaxSimilarity => "max_similarity",
            Criterion::MinDiscDelta => "min_disc_delta",
            Criterion::GreedyAccuracy => "greedy_accuracy",
        }
    }

    /// Command-line spelling.
    pub fn flag(self) -> &'static str {
        match self {
            Criterion::MaxRatio => "max-ratio",
            Criterion::MaxCount => "max-count",
            Criterion::MaxSimilarity => "max-similarity",
            Criterion::MinDiscDelta => "min-disc-delta",
            Criterion::GreedyAccuracy => "greedy-acc",
        }
    }

    pub fn parse(s: &str) -> Result<Criterion> {
        Criterion::ALL
            .into_iter()
            .find(|c| c.flag() == s || c.as_str() == s)
            .ok_or_else(|| AuditError::Config(format!("unknown selection criterion `{s}`")))
    }

    /// Whether larger criterion values are better.
    pub fn maximize(self) -> bool {
        matches!(self, Criterion::MaxRatio | Criterion::MaxCount | Criterion::GreedyAccuracy)
    }

    pub fn needs_model(self) -> bool {
        !matches!(self, Criterion::MaxRatio | Criterion::MaxCount)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionOutcome {
    pub criterion: Criterion,
    pub subgroup: String,
    pub chosen: String,
    /// Criterion value per scored candidate, in registry order.
    pub scores: IndexMap<String, f64>,
    /// The quantity behind each score (Score XY for similarity, the subgroup
    /// accuracy or discrepancy of the candidate model otherwise).
    pub raw: IndexMap<String, f64>,
    /// Candidates excluded from `scores`, or notes on the choice, with reasons.
    pub flagged: IndexMap<String, String>,
}

/// Index of the first optimum.
fn first_optimum(values: &[f64], maximize: bool) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &v) in values.iter().enumerate() {
        let better = match best {
            None => true,
            Some(b) => {
                if maximize {
                    v > values[b]
                } else {
                    v < values[b]
                }
            }
        };
        if better {
            best = Some(i);
        }
    }
    best
}

fn outcome(
    criterion: Criterion,
    subgroup: &str,
    evaluated: Vec<(String, Result<(f64, f64)>)>,
) -> Result<SelectionOutcome> {
    let mut scores = IndexMap::new();
    let mut raw = IndexMap::new();
    let mut flagged = IndexMap::new();
    for (token, r) in evaluated {
        match r {
            Ok((score, value)) => {
                scores.insert(token.clone(), score);
                raw.insert(token, value);
            }
            Err(e) => {
                flagged.insert(token, e.to_string());
            }
        }
    }
    let values: Vec<f64> = scores.values().copied().collect();
    let idx = first_optimum(&values, criterion.maximize())
        .ok_or_else(|| AuditError::domain(format!("no candidate source could be scored for {}", criterion.as_str())))?;
    Ok(SelectionOutcome {
        criterion,
        subgroup: subgroup.to_string(),
        chosen: scores.get_index(idx).expect("index in range").0.clone(),
        scores,
        raw,
        flagged,
    })
}

fn require_non_empty(r: &SourceRegistry) -> Result<()> {
    if r.is_empty() {
        return Err(AuditError::domain("selection needs at least one candidate source"));
    }
    Ok(())
}

/// Source with the largest share of subgroup `a`.
pub fn select_max_ratio(r: &SourceRegistry, a: &str) -> Result<SelectionOutcome> {
    require_non_empty(r)?;
    let evaluated = r
        .iter()
        .map(|(t, d)| (t.to_string(), subgroup_ratio(d, a).map(|v| (v, v))))
        .collect();
    let mut out = outcome(Criterion::MaxRatio, a, evaluated)?;
    if out.scores.values().all(|&v| v == 0.0) {
        out.flagged.insert(out.chosen.clone(), format!("no source contains subgroup `{a}`; first source returned"));
    }
    Ok(out)
}

/// Source with the most members of subgroup `a`.
pub fn select_max_count(r: &SourceRegistry, a: &str) -> Result<SelectionOutcome> {
    require_non_empty(r)?;
    let evaluated = r
        .iter()
        .map(|(t, d)| {
            let c = d.subgroup_count(a) as f64;
            (t.to_string(), Ok((c, c)))
        })
        .collect();
    let mut out = outcome(Criterion::MaxCount, a, evaluated)?;
    if out.scores.values().all(|&v| v == 0.0) {
        out.flagged.insert(out.chosen.clone(), format!("no source contains subgroup `{a}`; first source returned"));
    }
    Ok(out)
}

/// Source whose distribution is closest to the `a`-slice of `test_slice`:
/// the membership classifier separates P = test `a`-slice from Q = the whole
/// source, and the criterion is `|Score XY − 0.5|` on held-out P.
pub fn select_most_similar(test_slice: &DataSet, r: &SourceRegistry, a: &str, seed: u64) -> Result<SelectionOutcome> {
    require_non_empty(r)?;
    let p = test_slice.subgroup_subset(a);
    if p.is_empty() {
        return Err(AuditError::domain(format!("test slice has no members of subgroup `{a}`")));
    }
    let candidates: Vec<(&str, &DataSet)> = r.iter().collect();
    let evaluated = candidates
        .par_iter()
        .map(|(t, q)| {
            let s = derive_seed(seed, &[Label::Str("similarity"), Label::Str(t), Label::Str(a)]);
            let res = fit_domain_classifier(&p, q, s).and_then(|c| score_xy(&c, &c.held_out)).map(|v| ((v - 0.5).abs(), v));
            (t.to_string(), res)
        })
        .collect();
    outcome(Criterion::MaxSimilarity, a, evaluated)
}

/// Settings shared by the model-based criteria.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SelectionConfig {
    /// Samples drawn from each candidate; `None` adds the whole source.
    pub n_added: Option<usize>,
    pub seed: u64,
    pub stratify: bool,
    /// Number of target folds averaged by [`select_for_target`].
    pub folds: usize,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        SelectionConfig {
            n_added: Some(1000),
            seed: 0,
            stratify: false,
            folds: 1,
        }
    }
}

fn candidate_addition(token: &str, d: &DataSet, cfg: &SelectionConfig) -> Result<DataSet> {
    match cfg.n_added {
        Some(n) if d.len() > n => draw_fixed(d, n, derive_seed(cfg.seed, &[Label::Str("select-added"), Label::Str(token)]), cfg.stratify),
        _ => Ok(d.clone()),
    }
}

#[derive(Clone, Copy)]
enum SliceMetric {
    Accuracy,
    Disc,
}

fn slice_metric<T: Trainer>(train: &DataSet, test_slice: &DataSet, trainer: &T, seed: u64, m: SliceMetric) -> Result<f64> {
    let model = trainer.fit(train, seed)?;
    let rec = evaluate(&model, test_slice)?;
    Ok(match m {
        SliceMetric::Accuracy => rec.overall.accuracy,
        SliceMetric::Disc => rec.overall.mean_discrepancy,
    })
}

fn model_criterion<T: Trainer>(
    criterion: Criterion,
    m: SliceMetric,
    train: &DataSet,
    r: &SourceRegistry,
    test_slice: &DataSet,
    trainer: &T,
    cfg: &SelectionConfig,
) -> Result<Vec<(String, Result<(f64, f64)>)>> {
    require_non_empty(r)?;
    if train.is_empty() || test_slice.is_empty() {
        return Err(AuditError::domain("selection needs a non-empty train set and test slice"));
    }
    let seed = |t: &str| derive_seed(cfg.seed, &[Label::Str("select-fit"), Label::Str(criterion.as_str()), Label::Str(t)]);
    let base = match m {
        SliceMetric::Disc => Some(slice_metric(train, test_slice, trainer, seed("-"), m)?),
        SliceMetric::Accuracy => None,
    };
    let candidates: Vec<(&str, &DataSet)> = r.iter().collect();
    Ok(candidates
        .par_iter()
        .map(|(t, d)| {
            let res = candidate_addition(t, d, cfg)
                .and_then(|add| train.concat(&add))
                .and_then(|composed| slice_metric(&composed, test_slice, trainer, seed(t), m))
                .map(|v| match base {
                    Some(b) => (v - b, v),
                    None => (v, v),
                });
            (t.to_string(), res)
        })
        .collect())
}

fn slice_name(test_slice: &DataSet) -> String {
    match test_slice.subgroups().as_slice() {
        [one] => one.clone(),
        _ => "all".to_string(),
    }
}

/// Candidate minimizing `Disc(f_{train+i}, test) − Disc(f_train, test)`.
pub fn select_min_disc_delta<T: Trainer>(
    train: &DataSet,
    r: &SourceRegistry,
    test_slice: &DataSet,
    trainer: &T,
    cfg: &SelectionConfig,
) -> Result<SelectionOutcome> {
    let evaluated = model_criterion(Criterion::MinDiscDelta, SliceMetric::Disc, train, r, test_slice, trainer, cfg)?;
    outcome(Criterion::MinDiscDelta, &slice_name(test_slice), evaluated)
}

/// Candidate maximizing `Acc(f_{train+i}, test)`.
pub fn greedy_accuracy_step<T: Trainer>(
    train: &DataSet,
    r: &SourceRegistry,
    test_slice: &DataSet,
    trainer: &T,
    cfg: &SelectionConfig,
) -> Result<SelectionOutcome> {
    let evaluated = model_criterion(Criterion::GreedyAccuracy, SliceMetric::Accuracy, train, r, test_slice, trainer, cfg)?;
    outcome(Criterion::GreedyAccuracy, &slice_name(test_slice), evaluated)
}

/// Repeats [`greedy_accuracy_step`], moving each chosen source into the
/// training set, for up to `steps` steps.
pub fn greedy_accuracy<T: Trainer>(
    train: &DataSet,
    r: &SourceRegistry,
    test_slice: &DataSet,
    trainer: &T,
    cfg: &SelectionConfig,
    steps: usize,
) -> Result<Vec<SelectionOutcome>> {
    let mut train = train.clone();
    let mut pool = r.clone();
    let mut out = Vec::new();
    for _ in 0..steps {
        if pool.is_empty() {
            break;
        }
        let step = greedy_accuracy_step(&train, &pool, test_slice, trainer, cfg)?;
        let chosen = pool.require(&step.chosen)?;
        train = train.concat(&candidate_addition(&step.chosen, chosen, cfg)?)?;
        pool = without(&pool, &step.chosen)?;
        out.push(step);
    }
    Ok(out)
}

/// `r` minus one source, order preserved.
pub fn without(r: &SourceRegistry, token: &str) -> Result<SourceRegistry> {
    let mut out = SourceRegistry::new();
    for (t, d) in r.iter().filter(|(t, _)| *t != token) {
        out.insert(t, d.clone())?;
    }
    Ok(out)
}

/// Runs `criterion` for subgroup `a` of `target`: candidates are all other
/// sources; model-based criteria use the target's fold plan and average the
/// criterion over the first `sel.folds` folds.
pub fn select_for_target<T: Trainer>(
    criterion: Criterion,
    target: Option<&str>,
    a: &str,
    r: &SourceRegistry,
    exp: &ExperimentConfig,
    sel: &SelectionConfig,
    trainer: &T,
) -> Result<SelectionOutcome> {
    let candidates = match target {
        Some(t) => {
            r.require(t)?;
            without(r, t)?
        }
        None => r.clone(),
    };
    match criterion {
        Criterion::MaxRatio => return select_max_ratio(&candidates, a),
        Criterion::MaxCount => return select_max_count(&candidates, a),
        _ => {}
    }
    let t = target.ok_or_else(|| AuditError::Config(format!("criterion {} needs a target source", criterion.flag())))?;
    let data = r.require(t)?;
    let plans = plan_target_folds(t, data, exp)?;
    let n_folds = sel.folds.clamp(1, plans.len());
    let mut runs = Vec::with_capacity(n_folds);
    for plan in plans.into_iter().take(n_folds) {
        let test = data.select(&plan.test_indices);
        let train = data.select(&plan.train_indices);
        let fold_cfg = SelectionConfig {
            seed: derive_seed(sel.seed, &[Label::Str("select-fold"), Label::Int(plan.fold as u64)]),
            ..sel.clone()
        };
        let out = match criterion {
            Criterion::MaxSimilarity => select_most_similar(&test, &candidates, a, fold_cfg.seed)?,
            Criterion::MinDiscDelta => select_min_disc_delta(&train, &candidates, &test.subgroup_subset(a), trainer, &fold_cfg)?,
            Criterion::GreedyAccuracy => greedy_accuracy_step(&train, &candidates, &test.subgroup_subset(a), trainer, &fold_cfg)?,
            Criterion::MaxRatio | Criterion::MaxCount => unreachable!("handled above"),
        };
        runs.push(out);
    }
    Ok(average_outcomes(criterion, a, runs))
}

/// Fold-averaged scores; a candidate flagged in any fold stays flagged.
fn average_outcomes(criterion: Criterion, a: &str, runs: Vec<SelectionOutcome>) -> SelectionOutcome {
    if runs.len() == 1 {
        let mut only = runs.into_iter().next().expect("one run");
        only.subgroup = a.to_string();
        return only;
    }
    let mut flagged: IndexMap<String, String> = IndexMap::new();
    for r in &runs {
        for (k, v) in &r.flagged {
            flagged.entry(k.clone()).or_insert_with(|| v.clone());
        }
    }
    let n = runs.len() as f64;
    let mut scores: IndexMap<String, f64> = IndexMap::new();
    let mut raw: IndexMap<String, f64> = IndexMap::new();
    for k in runs[0].scores.keys() {
        if flagged.contains_key(k) {
            continue;
        }
        scores.insert(k.clone(), runs.iter().map(|r| r.scores[k]).sum::<f64>() / n);
        raw.insert(k.clone(), runs.iter().map(|r| r.raw[k]).sum::<f64>() / n);
    }
    let values: Vec<f64> = scores.values().copied().collect();
    let chosen = first_optimum(&values, criterion.maximize())
        .map(|i| scores.get_index(i).expect("in range").0.clone())
        .unwrap_or_else(|| runs[0].chosen.clone());
    SelectionOutcome {
        criterion,
        subgroup: a.to_string(),
        chosen,
        scores,
        raw,
        flagged,
    }
}
