//! Experiment protocols: Baseline, Whole-Source, Subgroup-Level and the
//! calibration comparison, run over (target × added source × fold) grids.
//!
//! Folds are defined on the target source. Within fold `f` the baseline model
//! and every intervention model are evaluated on the identical test set; each
//! record stores the test-set digests of both sides so the pairing can be
//! audited. Added-source draws are re-seeded per fold.

mod engine;
mod pareto;

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::SourceRegistry;
use crate::error::{AuditError, Result};
use crate::model::{Trainer, DEFAULT_THRESHOLD};
use crate::reporting::{summarize_records, BmwSummary};

pub use engine::{plan_target_folds, FoldPlan, SplitMode};
pub use pareto::{dominates, pareto_frontier, pareto_indices};

use engine::{Arm, TargetFold};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub n_train: usize,
    pub n_test: usize,
    pub n_added: usize,
    pub subgroup_cap: usize,
    pub n_validation: usize,
    pub k_folds: usize,
    pub threshold: f64,
    pub seed: u64,
    pub stratify_draws: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            n_train: 1000,
            n_test: 400,
            n_added: 1000,
            subgroup_cap: 1000,
            n_validation: 200,
            k_folds: 5,
            threshold: DEFAULT_THRESHOLD,
            seed: 0,
            stratify_draws: false,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("n_train", self.n_train),
            ("n_test", self.n_test),
            ("n_added", self.n_added),
            ("subgroup_cap", self.subgroup_cap),
            ("n_validation", self.n_validation),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(AuditError::Config(format!("{name} must be positive")));
            }
        }
        if self.k_folds < 2 {
            return Err(AuditError::Config("k_folds must be at least 2".into()));
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(AuditError::Config("threshold must lie in (0, 1)".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdditionMode {
    Baseline,
    WholeSource,
    /// Whole-Source cell whose added source is the target itself.
    Control,
    SubgroupLevel,
    /// Whole-Source addition followed by isotonic calibration on a holdout.
    WholeSourceCalibrated,
}

impl AdditionMode {
    pub fn as_str(self) -> &'static str {
        match self {
            AdditionMode::Baseline => "baseline",
            AdditionMode::WholeSource => "whole_source",
            AdditionMode::Control => "control",
            AdditionMode::SubgroupLevel => "subgroup_level",
            AdditionMode::WholeSourceCalibrated => "whole_source_calibrated",
        }
    }
}

/// Mean and sample standard deviation (n − 1 denominator; 0 for one fold).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FoldStat {
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

impl FoldStat {
    pub fn from_values(values: &[f64]) -> Option<FoldStat> {
        if values.is_empty() {
            return None;
        }
        let n = values.len();
        let mean = values.iter().sum::<f64>() / n as f64;
        let std = if n > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        Some(FoldStat { mean, std, n })
    }
}

/// Fold-averaged level of the metrics on one slice.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SliceSummary {
    pub accuracy: FoldStat,
    pub auc: Option<FoldStat>,
    pub mean_discrepancy: FoldStat,
    pub n: FoldStat,
}

/// A fold-averaged [`crate::metrics::MetricRecord`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub overall: SliceSummary,
    pub subgroups: BTreeMap<String, SliceSummary>,
    pub folds: usize,
}

/// Change of every metric on one slice, with the levels on both sides.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SliceDelta {
    pub delta_accuracy: FoldStat,
    pub delta_auc: Option<FoldStat>,
    pub delta_disc: FoldStat,
    pub delta_ratio: FoldStat,
    pub samples_added: FoldStat,
    pub base: SliceSummary,
    pub after: SliceSummary,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldTrace {
    pub fold: usize,
    pub baseline_test_digest: String,
    pub intervention_test_digest: String,
    pub n_train: usize,
    pub n_added: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct RecordKey {
    pub target: String,
    pub added: Option<String>,
    pub mode: AdditionMode,
    pub subgroup_filter: Option<String>,
}

impl std::fmt::Display for RecordKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{}|{}|{}|{}",
            self.target,
            self.added.as_deref().unwrap_or("-"),
            self.mode.as_str(),
            self.subgroup_filter.as_deref().unwrap_or("-")
        )
    }
}

/// Intervention minus baseline, per slice, on identical test folds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaRecord {
    pub target: String,
    pub added: Option<String>,
    pub mode: AdditionMode,
    pub subgroup_filter: Option<String>,
    pub overall: SliceDelta,
    /// Subgroups absent from every test fold have no entry.
    pub subgroups: BTreeMap<String, SliceDelta>,
    pub folds: Vec<FoldTrace>,
}

impl DeltaRecord {
    pub fn key(&self) -> RecordKey {
        RecordKey {
            target: self.target.clone(),
            added: self.added.clone(),
            mode: self.mode,
            subgroup_filter: self.subgroup_filter.clone(),
        }
    }

    pub fn slice(&self, key: &str) -> Option<&SliceDelta> {
        if key == crate::metrics::OVERALL {
            Some(&self.overall)
        } else {
            self.subgroups.get(key)
        }
    }

    pub fn entries(&self) -> impl Iterator<Item = (&str, &SliceDelta)> {
        std::iter::once((crate::metrics::OVERALL, &self.overall))
            .chain(self.subgroups.iter().map(|(k, v)| (k.as_str(), v)))
    }
}

fn targets_or_all(registry: &SourceRegistry, targets: Option<&[String]>) -> Result<Vec<String>> {
    let list: Vec<String> = match targets {
        Some(t) => t.to_vec(),
        None => registry.tokens().map(str::to_string).collect(),
    };
    for t in &list {
        registry.require(t)?;
    }
    Ok(list)
}

fn prepare_targets<T: Trainer>(
    targets: &[String],
    registry: &SourceRegistry,
    cfg: &ExperimentConfig,
    trainer: &T,
) -> Result<BTreeMap<String, Vec<TargetFold>>> {
    cfg.validate()?;
    let tasks: Vec<(String, FoldPlan)> = targets
        .iter()
        .map(|t| Ok(plan_target_folds(t, registry.require(t)?, cfg)?.into_iter().map(|p| (t.clone(), p)).collect::<Vec<_>>()))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .flatten()
        .collect();
    let folds: Vec<(String, TargetFold)> = tasks
        .into_par_iter()
        .map(|(t, plan)| {
            let data = registry.require(&t)?;
            Ok((t.clone(), TargetFold::build(&t, data, plan, cfg, trainer)?))
        })
        .collect::<Result<_>>()?;
    let mut out: BTreeMap<String, Vec<TargetFold>> = BTreeMap::new();
    for (t, f) in folds {
        out.entry(t).or_default().push(f);
    }
    Ok(out)
}

/// Fold-averaged baseline metrics of `target`.
pub fn run_baseline<T: Trainer>(target: &str, r: &SourceRegistry, cfg: &ExperimentConfig, trainer: &T) -> Result<MetricSummary> {
    let prepared = prepare_targets(&[target.to_string()], r, cfg, trainer)?;
    Ok(engine::summarize_baseline(&prepared[target]))
}

/// One Whole-Source cell. `added = None` is the identity intervention and
/// yields a record of zero deltas; `added = Some(target)` is the control.
pub fn run_whole_source<T: Trainer>(
    target: &str,
    added: Option<&str>,
    r: &SourceRegistry,
    cfg: &ExperimentConfig,
    trainer: &T,
) -> Result<DeltaRecord> {
    let prepared = prepare_targets(&[target.to_string()], r, cfg, trainer)?;
    let arm = match added {
        None => Arm::Identity,
        Some(a) => Arm::whole_source(target, a),
    };
    engine::run_cell(target, &prepared[target], arm, r, cfg, trainer)
}

/// One Subgroup-Level cell: only the `a`-slice of `added` is appended, capped.
pub fn run_subgroup_level<T: Trainer>(
    target: &str,
    added: &str,
    a: &str,
    r: &SourceRegistry,
    cfg: &ExperimentConfig,
    trainer: &T,
) -> Result<DeltaRecord> {
    let prepared = prepare_targets(&[target.to_string()], r, cfg, trainer)?;
    engine::run_cell(target, &prepared[target], Arm::SubgroupLevel { added: added.to_string(), subgroup: a.to_string() }, r, cfg, trainer)
}

/// Whole-Source deltas with and without isotonic calibration for every
/// added source other than the target, plus the Best/Median/Worst summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationComparison {
    pub target: String,
    pub records: Vec<DeltaRecord>,
    pub summary: BmwSummary,
}

pub fn run_calibration_comparison<T: Trainer>(
    target: &str,
    r: &SourceRegistry,
    cfg: &ExperimentConfig,
    trainer: &T,
) -> Result<CalibrationComparison> {
    let records = run_calibration_grid(Some(&[target.to_string()]), r, cfg, trainer)?;
    let summary = summarize_records(&records)?;
    Ok(CalibrationComparison {
        target: target.to_string(),
        records,
        summary,
    })
}

fn run_grid<T: Trainer>(
    targets: &[String],
    arms_for: impl Fn(&str) -> Vec<Arm> + Sync,
    r: &SourceRegistry,
    cfg: &ExperimentConfig,
    trainer: &T,
) -> Result<Vec<DeltaRecord>> {
    let prepared = prepare_targets(targets, r, cfg, trainer)?;
    let cells: Vec<(&str, Arm)> = targets
        .iter()
        .flat_map(|t| arms_for(t).into_iter().map(move |a| (t.as_str(), a)))
        .collect();
    cells
        .into_par_iter()
        .map(|(t, arm)| engine::run_cell(t, &prepared[t], arm, r, cfg, trainer))
        .collect()
}

/// Baseline records (zero deltas, baseline levels) for each target.
pub fn run_baseline_grid<T: Trainer>(
    targets: Option<&[String]>,
    r: &SourceRegistry,
    cfg: &ExperimentConfig,
    trainer: &T,
) -> Result<Vec<DeltaRecord>> {
    let targets = targets_or_all(r, targets)?;
    run_grid(&targets, |_| vec![Arm::Identity], r, cfg, trainer)
}

/// The full Whole-Source grid: every target against every registry source,
/// the diagonal being the control.
pub fn run_whole_source_grid<T: Trainer>(
    targets: Option<&[String]>,
    r: &SourceRegistry,
    cfg: &ExperimentConfig,
    trainer: &T,
) -> Result<Vec<DeltaRecord>> {
    let targets = targets_or_all(r, targets)?;
    let sources: Vec<String> = r.tokens().map(str::to_string).collect();
    run_grid(
        &targets,
        |t| sources.iter().map(|s| Arm::whole_source(t, s)).collect(),
        r,
        cfg,
        trainer,
    )
}

/// Subgroup-Level grid over `subgroups` (default: all registry subgroups).
/// Cells whose added pool has no samples of the subgroup are skipped.
pub fn run_subgroup_level_grid<T: Trainer>(
    targets: Option<&[String]>,
    subgroups: Option<&[String]>,
    r: &SourceRegistry,
    cfg: &ExperimentConfig,
    trainer: &T,
) -> Result<Vec<DeltaRecord>> {
    let targets = targets_or_all(r, targets)?;
    let subgroups: Vec<String> = subgroups.map(<[String]>::to_vec).unwrap_or_else(|| r.subgroups());
    let sources: Vec<String> = r.tokens().map(str::to_string).collect();
    let arms = |t: &str| {
        let mut arms = Vec::new();
        for s in &sources {
            for a in &subgroups {
                // the target's own pool is checked per fold; other sources up front
                if s == t || r.get(s).is_some_and(|d| d.subgroup_count(a) > 0) {
                    arms.push(Arm::SubgroupLevel {
                        added: s.clone(),
                        subgroup: a.clone(),
                    });
                }
            }
        }
        arms
    };
    let prepared = prepare_targets(&targets, r, cfg, trainer)?;
    let cells: Vec<(&str, Arm)> = targets
        .iter()
        .flat_map(|t| arms(t).into_iter().map(move |a| (t.as_str(), a)))
        .collect();
    let results: Vec<Option<DeltaRecord>> = cells
        .into_par_iter()
        .map(|(t, arm)| match engine::run_cell(t, &prepared[t], arm, r, cfg, trainer) {
            Ok(rec) => Ok(Some(rec)),
            Err(AuditError::EmptyAddition { .. }) => Ok(None),
            Err(e) => Err(e),
        })
        .collect::<Result<_>>()?;
    Ok(results.into_iter().flatten().collect())
}

/// Both calibration arms for every (target, added ≠ target) pair: the plain
/// Whole-Source record and the calibrated one.
pub fn run_calibration_grid<T: Trainer>(
    targets: Option<&[String]>,
    r: &SourceRegistry,
    cfg: &ExperimentConfig,
    trainer: &T,
) -> Result<Vec<DeltaRecord>> {
    let targets = targets_or_all(r, targets)?;
    let sources: Vec<String> = r.tokens().map(str::to_string).collect();
    run_grid(
        &targets,
        |t| {
            sources
                .iter()
                .filter(|s| s.as_str() != t)
                .flat_map(|s| [Arm::whole_source(t, s), Arm::Calibrated { added: s.clone() }])
                .collect()
        },
        r,
        cfg,
        trainer,
    )
}
