use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{AdditionMode, DeltaRecord, ExperimentConfig, FoldStat, FoldTrace, MetricSummary, SliceDelta, SliceSummary};
use crate::calibration::calibrate_classifier;
use crate::data::{delta_ratio, draw_fixed, draw_indices, stratified_fold_assignment, DataSet, SourceRegistry};
use crate::error::{AuditError, Result};
use crate::metrics::{evaluate, evaluate_scores, MetricRecord, SliceMetrics, OVERALL};
use crate::model::{BinaryClassifier, Trainer};
use crate::seeding::{derive_seed, Label};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitMode {
    /// Test sets come from disjoint stratified folds of the target.
    KFold,
    /// Folds too small for `n_test`: each fold draws its own test set.
    IndependentDraws,
}

/// Index sets into the target source for one fold.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub fold: usize,
    pub mode: SplitMode,
    pub test_indices: Vec<usize>,
    pub train_indices: Vec<usize>,
    /// Target samples in neither test nor train; the control and the
    /// target's own Subgroup-Level additions draw from here.
    pub leftover_indices: Vec<usize>,
}

fn pick(data: &DataSet, candidates: &[usize], n: usize, seed: u64, stratify: bool) -> Result<Vec<usize>> {
    let sub = data.select(candidates);
    Ok(draw_indices(&sub, n, seed, stratify)?.into_iter().map(|i| candidates[i]).collect())
}

fn minus(all: &[usize], taken: &[usize]) -> Vec<usize> {
    let taken: BTreeSet<usize> = taken.iter().copied().collect();
    all.iter().copied().filter(|i| !taken.contains(i)).collect()
}

/// Splits the target into `k_folds` (test, train, leftover) index sets.
///
/// When every stratified fold holds at least `n_test` samples and the rest at
/// least `n_train`, test sets are drawn inside disjoint folds; otherwise each
/// fold draws a fresh test set from the whole source.
pub fn plan_target_folds(token: &str, data: &DataSet, cfg: &ExperimentConfig) -> Result<Vec<FoldPlan>> {
    let n = data.len();
    let need = cfg.n_train + cfg.n_test;
    if n < need {
        return Err(AuditError::InsufficientSamples {
            source_token: token.to_string(),
            needed: need,
            available: n,
            context: "train + test draw".into(),
        });
    }
    let k = cfg.k_folds;
    let largest = n.div_ceil(k);
    let kfold = n >= k && n / k >= cfg.n_test && n - largest >= cfg.n_train;
    let all: Vec<usize> = (0..n).collect();
    let assignment = if kfold {
        Some(stratified_fold_assignment(data, k, derive_seed(cfg.seed, &[Label::Str("folds"), Label::Str(token)]))?)
    } else {
        None
    };
    (0..k)
        .map(|f| {
            let test_seed = derive_seed(cfg.seed, &[Label::Str("test"), Label::Str(token), Label::Int(f as u64)]);
            let train_seed = derive_seed(cfg.seed, &[Label::Str("train"), Label::Str(token), Label::Int(f as u64)]);
            let (test, rest) = match &assignment {
                Some(a) => {
                    let (in_fold, rest): (Vec<usize>, Vec<usize>) = all.iter().partition(|&&i| a[i] == f);
                    (pick(data, &in_fold, cfg.n_test, test_seed, cfg.stratify_draws)?, rest)
                }
                None => {
                    let test = pick(data, &all, cfg.n_test, test_seed, cfg.stratify_draws)?;
                    let rest = minus(&all, &test);
                    (test, rest)
                }
            };
            let train = pick(data, &rest, cfg.n_train, train_seed, cfg.stratify_draws)?;
            let leftover = minus(&rest, &train);
            Ok(FoldPlan {
                fold: f,
                mode: if kfold { SplitMode::KFold } else { SplitMode::IndependentDraws },
                test_indices: test,
                train_indices: train,
                leftover_indices: leftover,
            })
        })
        .collect()
}

/// A target fold with its baseline model already evaluated.
pub(crate) struct TargetFold {
    pub fold: usize,
    pub test: DataSet,
    pub train: DataSet,
    pub leftover: DataSet,
    pub base: MetricRecord,
    pub base_digest: String,
}

impl TargetFold {
    pub fn build<T: Trainer>(token: &str, data: &DataSet, plan: FoldPlan, cfg: &ExperimentConfig, trainer: &T) -> Result<Self> {
        let test = data.select(&plan.test_indices);
        let train = data.select(&plan.train_indices);
        let leftover = data.select(&plan.leftover_indices);
        let seed = derive_seed(cfg.seed, &[Label::Str("fit"), Label::Str(token), Label::Str("baseline"), Label::Int(plan.fold as u64)]);
        let model = trainer.fit(&train, seed)?;
        let base = evaluate(&model, &test)?;
        Ok(TargetFold {
            fold: plan.fold,
            base_digest: test.digest(),
            test,
            train,
            leftover,
            base,
        })
    }
}

/// The intervention applied in one grid cell.
#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) enum Arm {
    Identity,
    WholeSource { added: String },
    Control,
    SubgroupLevel { added: String, subgroup: String },
    Calibrated { added: String },
}

impl Arm {
    pub fn whole_source(target: &str, added: &str) -> Arm {
        if target == added {
            Arm::Control
        } else {
            Arm::WholeSource { added: added.to_string() }
        }
    }

    fn mode(&self) -> AdditionMode {
        match self {
            Arm::Identity => AdditionMode::Baseline,
            Arm::WholeSource { .. } => AdditionMode::WholeSource,
            Arm::Control => AdditionMode::Control,
            Arm::SubgroupLevel { .. } => AdditionMode::SubgroupLevel,
            Arm::Calibrated { .. } => AdditionMode::WholeSourceCalibrated,
        }
    }

    fn added<'a>(&'a self, target: &'a str) -> Option<&'a str> {
        match self {
            Arm::Identity => None,
            Arm::Control => Some(target),
            Arm::WholeSource { added } | Arm::SubgroupLevel { added, .. } | Arm::Calibrated { added } => Some(added),
        }
    }

    fn tag(&self) -> &'static str {
        self.mode().as_str()
    }
}

struct FoldOutcome {
    fold: usize,
    after: MetricRecord,
    addition: DataSet,
    digest: String,
    n_train: usize,
}

fn whole_source_draw(
    target: &str,
    added: &str,
    r: &SourceRegistry,
    cfg: &ExperimentConfig,
    fold: usize,
) -> Result<DataSet> {
    let src = r.require(added)?;
    if src.len() < cfg.n_added {
        return Err(AuditError::InsufficientSamples {
            source_token: added.to_string(),
            needed: cfg.n_added,
            available: src.len(),
            context: "whole-source addition".into(),
        });
    }
    let seed = derive_seed(cfg.seed, &[Label::Str("added"), Label::Str(target), Label::Str(added), Label::Int(fold as u64)]);
    draw_fixed(src, cfg.n_added, seed, cfg.stratify_draws)
}

fn run_fold<T: Trainer>(
    target: &str,
    tf: &TargetFold,
    arm: &Arm,
    r: &SourceRegistry,
    cfg: &ExperimentConfig,
    trainer: &T,
) -> Result<FoldOutcome> {
    let fold_label = Label::Int(tf.fold as u64);
    let added_label = Label::Str(arm.added(target).unwrap_or("-"));
    let fit_seed = derive_seed(cfg.seed, &[Label::Str("fit"), Label::Str(target), added_label, Label::Str(arm.tag()), fold_label]);

    let addition = match arm {
        Arm::Identity => {
            return Ok(FoldOutcome {
                fold: tf.fold,
                after: tf.base.clone(),
                addition: DataSet::empty(tf.train.feature_dim())?,
                digest: tf.base_digest.clone(),
                n_train: tf.train.len(),
            })
        }
        Arm::WholeSource { added } | Arm::Calibrated { added } => whole_source_draw(target, added, r, cfg, tf.fold)?,
        Arm::Control => {
            if tf.leftover.len() < cfg.n_train {
                return Err(AuditError::InsufficientSamples {
                    source_token: target.to_string(),
                    needed: cfg.n_train,
                    available: tf.leftover.len(),
                    context: "control addition from samples outside the test and train draws".into(),
                });
            }
            let seed = derive_seed(cfg.seed, &[Label::Str("control"), Label::Str(target), fold_label]);
            draw_fixed(&tf.leftover, cfg.n_train, seed, cfg.stratify_draws)?
        }
        Arm::SubgroupLevel { added, subgroup } => {
            let pool = if added == target {
                tf.leftover.subgroup_subset(subgroup)
            } else {
                r.require(added)?.subgroup_subset(subgroup)
            };
            if pool.is_empty() {
                return Err(AuditError::EmptyAddition {
                    source_token: added.clone(),
                    subgroup: subgroup.clone(),
                });
            }
            let take = pool.len().min(cfg.subgroup_cap);
            let seed = derive_seed(cfg.seed, &[Label::Str("subgroup-added"), Label::Str(target), Label::Str(added), Label::Str(subgroup), fold_label]);
            draw_fixed(&pool, take, seed, cfg.stratify_draws)?
        }
    };
    let composed = tf.train.concat(&addition)?;

    let (after, n_train) = if let Arm::Calibrated { added } = arm {
        if composed.len() < cfg.n_validation + 2 {
            return Err(AuditError::InsufficientSamples {
                source_token: added.clone(),
                needed: cfg.n_validation + 2,
                available: composed.len(),
                context: "calibration holdout from the composed training set".into(),
            });
        }
        let seed = derive_seed(cfg.seed, &[Label::Str("validation"), Label::Str(target), Label::Str(added), fold_label]);
        let holdout = draw_indices(&composed, cfg.n_validation, seed, cfg.stratify_draws)?;
        let held: BTreeSet<usize> = holdout.iter().copied().collect();
        let fit_idx: Vec<usize> = (0..composed.len()).filter(|i| !held.contains(i)).collect();
        let fit_set = composed.select(&fit_idx);
        let model = trainer.fit(&fit_set, fit_seed)?;
        let calibrated = calibrate_classifier(model, &composed.select(&holdout))?;
        let scores = calibrated.score_all(&tf.test)?;
        (evaluate_scores(&tf.test, &scores, calibrated.threshold())?, fit_set.len())
    } else {
        let model = trainer.fit(&composed, fit_seed)?;
        (evaluate(&model, &tf.test)?, composed.len())
    };
    Ok(FoldOutcome {
        fold: tf.fold,
        after,
        addition,
        digest: tf.test.digest(),
        n_train,
    })
}

#[derive(Default)]
struct LevelAcc {
    accuracy: Vec<f64>,
    auc: Vec<f64>,
    disc: Vec<f64>,
    n: Vec<f64>,
}

impl LevelAcc {
    fn push(&mut self, m: &SliceMetrics) {
        self.accuracy.push(m.accuracy);
        if let Some(a) = m.auc {
            self.auc.push(a);
        }
        self.disc.push(m.mean_discrepancy);
        self.n.push(m.n as f64);
    }

    fn summary(&self) -> SliceSummary {
        SliceSummary {
            accuracy: FoldStat::from_values(&self.accuracy).expect("at least one fold"),
            auc: FoldStat::from_values(&self.auc),
            mean_discrepancy: FoldStat::from_values(&self.disc).expect("at least one fold"),
            n: FoldStat::from_values(&self.n).expect("at least one fold"),
        }
    }
}

#[derive(Default)]
struct DeltaAcc {
    base: LevelAcc,
    after: LevelAcc,
    d_acc: Vec<f64>,
    d_auc: Vec<f64>,
    d_disc: Vec<f64>,
    ratio: Vec<f64>,
    added: Vec<f64>,
}

impl DeltaAcc {
    fn finish(&self) -> SliceDelta {
        SliceDelta {
            delta_accuracy: FoldStat::from_values(&self.d_acc).expect("at least one fold"),
            delta_auc: FoldStat::from_values(&self.d_auc),
            delta_disc: FoldStat::from_values(&self.d_disc).expect("at least one fold"),
            delta_ratio: FoldStat::from_values(&self.ratio).expect("at least one fold"),
            samples_added: FoldStat::from_values(&self.added).expect("at least one fold"),
            base: self.base.summary(),
            after: self.after.summary(),
        }
    }
}

pub(crate) fn run_cell<T: Trainer>(
    target: &str,
    folds: &[TargetFold],
    arm: Arm,
    r: &SourceRegistry,
    cfg: &ExperimentConfig,
    trainer: &T,
) -> Result<DeltaRecord> {
    let outcomes: Vec<FoldOutcome> = folds
        .par_iter()
        .map(|tf| run_fold(target, tf, &arm, r, cfg, trainer))
        .collect::<Result<_>>()?;

    let mut overall = DeltaAcc::default();
    let mut groups: BTreeMap<String, DeltaAcc> = BTreeMap::new();
    let mut traces = Vec::with_capacity(folds.len());
    for (tf, out) in folds.iter().zip(&outcomes) {
        debug_assert_eq!(tf.fold, out.fold);
        let slices = std::iter::once((OVERALL, &tf.base.overall, &out.after.overall, None))
            .chain(tf.base.subgroups.iter().map(|(k, b)| (k.as_str(), b, &out.after.subgroups[k], Some(k.as_str()))));
        for (key, b, a, sub) in slices {
            let acc = match sub {
                None => &mut overall,
                Some(_) => groups.entry(key.to_string()).or_default(),
            };
            acc.base.push(b);
            acc.after.push(a);
            acc.d_acc.push(a.accuracy - b.accuracy);
            if let (Some(x), Some(y)) = (a.auc, b.auc) {
                acc.d_auc.push(x - y);
            }
            acc.d_disc.push(a.mean_discrepancy - b.mean_discrepancy);
            match sub {
                None => {
                    acc.ratio.push(0.0);
                    acc.added.push(out.addition.len() as f64);
                }
                Some(g) => {
                    acc.ratio.push(delta_ratio(&tf.train, &out.addition, g)?);
                    acc.added.push(out.addition.subgroup_count(g) as f64);
                }
            }
        }
        traces.push(FoldTrace {
            fold: tf.fold,
            baseline_test_digest: tf.base_digest.clone(),
            intervention_test_digest: out.digest.clone(),
            n_train: out.n_train,
            n_added: out.addition.len(),
        });
    }

    let subgroup_filter = match &arm {
        Arm::SubgroupLevel { subgroup, .. } => Some(subgroup.clone()),
        _ => None,
    };
    Ok(DeltaRecord {
        target: target.to_string(),
        added: arm.added(target).map(str::to_string),
        mode: arm.mode(),
        subgroup_filter,
        overall: overall.finish(),
        subgroups: groups.into_iter().map(|(k, v)| (k, v.finish())).collect(),
        folds: traces,
    })
}

pub(crate) fn summarize_baseline(folds: &[TargetFold]) -> MetricSummary {
    let mut overall = LevelAcc::default();
    let mut groups: BTreeMap<String, LevelAcc> = BTreeMap::new();
    for tf in folds {
        overall.push(&tf.base.overall);
        for (k, m) in &tf.base.subgroups {
            groups.entry(k.clone()).or_default().push(m);
        }
    }
    MetricSummary {
        overall: overall.summary(),
        subgroups: groups.into_iter().map(|(k, v)| (k, v.summary())).collect(),
        folds: folds.len(),
    }
}
