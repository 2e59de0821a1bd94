//! Dataset representation, subgroup views, ratio arithmetic, seeded
//! splitting and composition of augmented training sets.

use std::collections::BTreeMap;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{AuditError, Result};
use crate::seeding::{self, Label};

/// One labelled example: features, binary outcome, sensitive-attribute value
/// and the source it came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledSample {
    pub features: Vec<f64>,
    pub label: u8,
    pub subgroup: String,
    pub source: String,
}

impl LabeledSample {
    pub fn new(
        features: Vec<f64>,
        label: u8,
        subgroup: impl Into<String>,
        source: impl Into<String>,
    ) -> Result<Self> {
        if label > 1 {
            return Err(AuditError::domain(format!("label must be 0 or 1, got {label}")));
        }
        if let Some(pos) = features.iter().position(|v| !v.is_finite()) {
            return Err(AuditError::domain(format!("feature {pos} is not finite")));
        }
        Ok(LabeledSample {
            features,
            label,
            subgroup: subgroup.into(),
            source: source.into(),
        })
    }

    pub fn is_positive(&self) -> bool {
        self.label == 1
    }
}

/// An ordered multiset of samples sharing one feature dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataSet {
    samples: Vec<LabeledSample>,
    feature_dim: usize,
}

impl DataSet {
    pub fn new(samples: Vec<LabeledSample>, feature_dim: usize) -> Result<Self> {
        if feature_dim == 0 {
            return Err(AuditError::domain("feature_dim must be positive"));
        }
        for (i, s) in samples.iter().enumerate() {
            if s.features.len() != feature_dim {
                return Err(AuditError::domain(format!(
                    "sample {i} has {} features, expected {feature_dim}",
                    s.features.len()
                )));
            }
            if s.label > 1 {
                return Err(AuditError::domain(format!("sample {i} has non-binary label {}", s.label)));
            }
            if s.features.iter().any(|v| !v.is_finite()) {
                return Err(AuditError::domain(format!("sample {i} has a non-finite feature")));
            }
        }
        Ok(DataSet {
            samples,
            feature_dim,
        })
    }

    pub fn empty(feature_dim: usize) -> Result<Self> {
        DataSet::new(Vec::new(), feature_dim)
    }

    // Caller guarantees samples already share `feature_dim`.
    fn from_trusted(samples: Vec<LabeledSample>, feature_dim: usize) -> Self {
        DataSet {
            samples,
            feature_dim,
        }
    }

    pub fn samples(&self) -> &[LabeledSample] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<LabeledSample> {
        self.samples
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, LabeledSample> {
        self.samples.iter()
    }

    pub fn labels(&self) -> Vec<u8> {
        self.samples.iter().map(|s| s.label).collect()
    }

    pub fn n_positive(&self) -> usize {
        self.samples.iter().filter(|s| s.is_positive()).count()
    }

    pub fn base_rate(&self) -> Option<f64> {
        if self.is_empty() {
            None
        } else {
            Some(self.n_positive() as f64 / self.len() as f64)
        }
    }

    /// Distinct subgroup tokens, sorted.
    pub fn subgroups(&self) -> Vec<String> {
        let mut tokens: Vec<String> = self.samples.iter().map(|s| s.subgroup.clone()).collect();
        tokens.sort_unstable();
        tokens.dedup();
        tokens
    }

    pub fn subgroup_count(&self, a: &str) -> usize {
        self.samples.iter().filter(|s| s.subgroup == a).count()
    }

    /// Per-subgroup counts, keyed in sorted token order.
    pub fn subgroup_counts(&self) -> BTreeMap<String, usize> {
        let mut counts = BTreeMap::new();
        for s in &self.samples {
            *counts.entry(s.subgroup.clone()).or_insert(0) += 1;
        }
        counts
    }

    /// The view `D^a`.
    pub fn subgroup_subset(&self, a: &str) -> DataSet {
        self.filter(|s| s.subgroup == a)
    }

    /// The view `D_0` (label 0) or `D_1` (label 1).
    pub fn class_subset(&self, label: u8) -> DataSet {
        self.filter(|s| s.label == label)
    }

    pub fn filter(&self, mut keep: impl FnMut(&LabeledSample) -> bool) -> DataSet {
        let samples = self.samples.iter().filter(|s| keep(s)).cloned().collect();
        DataSet::from_trusted(samples, self.feature_dim)
    }

    /// Samples at `indices`, in the given order.
    pub fn select(&self, indices: &[usize]) -> DataSet {
        let samples = indices.iter().map(|&i| self.samples[i].clone()).collect();
        DataSet::from_trusted(samples, self.feature_dim)
    }

    /// Multiset union: `self` followed by `other`.
    pub fn concat(&self, other: &DataSet) -> Result<DataSet> {
        if other.feature_dim != self.feature_dim {
            return Err(AuditError::domain(format!(
                "cannot concatenate datasets of dimension {} and {}",
                self.feature_dim, other.feature_dim
            )));
        }
        let mut samples = Vec::with_capacity(self.len() + other.len());
        samples.extend_from_slice(&self.samples);
        samples.extend_from_slice(&other.samples);
        Ok(DataSet::from_trusted(samples, self.feature_dim))
    }

    /// Hex SHA-256 over features, labels and subgroup tokens. Used to check that
    /// paired evaluations really ran on the same test set.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        h.update((self.feature_dim as u64).to_le_bytes());
        for s in &self.samples {
            for v in &s.features {
                h.update(v.to_bits().to_le_bytes());
            }
            h.update([s.label]);
            h.update((s.subgroup.len() as u64).to_le_bytes());
            h.update(s.subgroup.as_bytes());
        }
        hex::encode(h.finalize())
    }
}

impl<'a> IntoIterator for &'a DataSet {
    type Item = &'a LabeledSample;
    type IntoIter = std::slice::Iter<'a, LabeledSample>;

    fn into_iter(self) -> Self::IntoIter {
        self.samples.iter()
    }
}

/// `D^a` as a free function.
pub fn subgroup_subset(d: &DataSet, a: &str) -> DataSet {
    d.subgroup_subset(a)
}

/// `Ratio(D, a) = |D^a| / |D|`.
pub fn subgroup_ratio(d: &DataSet, a: &str) -> Result<f64> {
    if d.is_empty() {
        return Err(AuditError::domain("subgroup ratio of an empty dataset is undefined"));
    }
    Ok(d.subgroup_count(a) as f64 / d.len() as f64)
}

/// `Ratio(train ∪ added, a) − Ratio(train, a)` with multiset union.
pub fn delta_ratio(train: &DataSet, added: &DataSet, a: &str) -> Result<f64> {
    if train.is_empty() {
        return Err(AuditError::domain("delta ratio needs a non-empty training set"));
    }
    let before = subgroup_ratio(train, a)?;
    let after = (train.subgroup_count(a) + added.subgroup_count(a)) as f64
        / (train.len() + added.len()) as f64;
    Ok(after - before)
}

/// Indices grouped by (subgroup, label) cell, cells in sorted key order.
fn strata(d: &DataSet) -> BTreeMap<(&str, u8), Vec<usize>> {
    let mut cells: BTreeMap<(&str, u8), Vec<usize>> = BTreeMap::new();
    for (i, s) in d.samples.iter().enumerate() {
        cells.entry((s.subgroup.as_str(), s.label)).or_default().push(i);
    }
    cells
}

/// Fold id for every sample of `d`.
///
/// Each (subgroup × label) cell is shuffled with its own seeded stream and dealt
/// round-robin; the dealing offset carries over between cells, so both the
/// per-cell counts and the total fold sizes differ by at most one.
pub fn stratified_fold_assignment(d: &DataSet, k: usize, seed: u64) -> Result<Vec<usize>> {
    if k < 2 {
        return Err(AuditError::domain(format!("k must be at least 2, got {k}")));
    }
    if k > d.len() {
        return Err(AuditError::domain(format!(
            "cannot split {} samples into {k} folds",
            d.len()
        )));
    }
    let mut assignment = vec![usize::MAX; d.len()];
    let mut offset = 0usize;
    for ((subgroup, label), mut members) in strata(d) {
        let cell_seed = seeding::derive_seed(seed, &[Label::Str("kfold"), Label::Str(subgroup), Label::Int(label as u64)]);
        seeding::shuffle_in_place(&mut members, cell_seed);
        for (j, idx) in members.iter().enumerate() {
            assignment[*idx] = (offset + j) % k;
        }
        offset = (offset + members.len()) % k;
    }
    Ok(assignment)
}

/// One train/test split of a k-fold partition.
#[derive(Debug, Clone)]
pub struct Fold {
    pub train_indices: Vec<usize>,
    pub test_indices: Vec<usize>,
    pub train: DataSet,
    pub test: DataSet,
}

/// Stratified k-fold split keyed by (subgroup × label) cells.
pub fn stratified_kfold(d: &DataSet, k: usize, seed: u64) -> Result<Vec<Fold>> {
    let assignment = stratified_fold_assignment(d, k, seed)?;
    Ok((0..k)
        .map(|f| {
            let (test_indices, train_indices): (Vec<usize>, Vec<usize>) =
                (0..d.len()).partition(|&i| assignment[i] == f);
            Fold {
                train: d.select(&train_indices),
                test: d.select(&test_indices),
                train_indices,
                test_indices,
            }
        })
        .collect())
}

/// Largest-remainder allocation of `n` draws across cells proportional to
/// their sizes. Ties in the remainder go to the earlier cell.
fn proportional_allocation(sizes: &[usize], n: usize) -> Vec<usize> {
    let total: usize = sizes.iter().sum();
    if total == 0 {
        return vec![0; sizes.len()];
    }
    let mut alloc: Vec<usize> = sizes.iter().map(|&s| s * n / total).collect();
    let mut rest = n - alloc.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..sizes.len()).collect();
    // remainder numerators (s * n) mod total, compared exactly
    order.sort_by(|&a, &b| {
        let ra = (sizes[a] * n) % total;
        let rb = (sizes[b] * n) % total;
        rb.cmp(&ra).then(a.cmp(&b))
    });
    for &c in order.iter().cycle() {
        if rest == 0 {
            break;
        }
        if alloc[c] < sizes[c] {
            alloc[c] += 1;
            rest -= 1;
        }
    }
    alloc
}

/// Indices of `n` samples drawn without replacement, sorted ascending.
///
/// Candidate indices are sorted and then shuffled with a seeded stream; with
/// `stratify`, each (subgroup × label) cell contributes its largest-remainder
/// share of `n`.
pub fn draw_indices(d: &DataSet, n: usize, seed: u64, stratify: bool) -> Result<Vec<usize>> {
    if n > d.len() {
        return Err(AuditError::domain(format!(
            "cannot draw {n} samples from a dataset of {}",
            d.len()
        )));
    }
    let mut picked = if stratify {
        let cells = strata(d);
        let sizes: Vec<usize> = cells.values().map(Vec::len).collect();
        let alloc = proportional_allocation(&sizes, n);
        let mut picked = Vec::with_capacity(n);
        for (((subgroup, label), mut members), take) in cells.into_iter().zip(alloc) {
            let cell_seed = seeding::derive_seed(seed, &[Label::Str("draw"), Label::Str(subgroup), Label::Int(label as u64)]);
            seeding::shuffle_in_place(&mut members, cell_seed);
            picked.extend_from_slice(&members[..take]);
        }
        picked
    } else {
        let mut idx = seeding::shuffled_indices(d.len(), seeding::derive_seed(seed, &[Label::Str("draw")]));
        idx.truncate(n);
        idx
    };
    picked.sort_unstable();
    Ok(picked)
}

/// Draws `n` samples without replacement; output keeps the original order.
pub fn draw_fixed(d: &DataSet, n: usize, seed: u64, stratify: bool) -> Result<DataSet> {
    Ok(d.select(&draw_indices(d, n, seed, stratify)?))
}

/// Named external sources, kept in registration order.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SourceRegistry {
    sources: IndexMap<String, DataSet>,
}

impl SourceRegistry {
    pub fn new() -> Self {
        SourceRegistry::default()
    }

    pub fn insert(&mut self, token: impl Into<String>, data: DataSet) -> Result<()> {
        let token = token.into();
        if self.sources.contains_key(&token) {
            return Err(AuditError::domain(format!("duplicate source `{token}`")));
        }
        if let Some(dim) = self.feature_dim() {
            if dim != data.feature_dim() {
                return Err(AuditError::domain(format!(
                    "source `{token}` has dimension {}, registry has {dim}",
                    data.feature_dim()
                )));
            }
        }
        self.sources.insert(token, data);
        Ok(())
    }

    /// Appends every source of `other`; duplicate tokens are rejected.
    pub fn merge(&mut self, other: SourceRegistry) -> Result<()> {
        for (token, data) in other.sources {
            self.insert(token, data)?;
        }
        Ok(())
    }

    pub fn get(&self, token: &str) -> Option<&DataSet> {
        self.sources.get(token)
    }

    pub fn require(&self, token: &str) -> Result<&DataSet> {
        self.get(token)
            .ok_or_else(|| AuditError::domain(format!("unknown source `{token}`")))
    }

    pub fn tokens(&self) -> impl Iterator<Item = &str> {
        self.sources.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &DataSet)> {
        self.sources.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.sources.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sources.is_empty()
    }

    pub fn feature_dim(&self) -> Option<usize> {
        self.sources.values().next().map(DataSet::feature_dim)
    }

    /// All subgroup tokens present in any source, sorted.
    pub fn subgroups(&self) -> Vec<String> {
        let mut all: Vec<String> = self.sources.values().flat_map(|d| d.subgroups()).collect();
        all.sort_unstable();
        all.dedup();
        all
    }
}

/// The inclusion vector `z` plus the Subgroup-Level knobs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdditionVector {
    pub include: Vec<bool>,
    pub per_source_cap: Option<usize>,
    pub subgroup_filter: Option<String>,
}

impl AdditionVector {
    pub fn none(registry: &SourceRegistry) -> Self {
        AdditionVector {
            include: vec![false; registry.len()],
            per_source_cap: None,
            subgroup_filter: None,
        }
    }

    /// Includes only `token`.
    pub fn single(registry: &SourceRegistry, token: &str) -> Result<Self> {
        let pos = registry
            .tokens()
            .position(|t| t == token)
            .ok_or_else(|| AuditError::domain(format!("unknown source `{token}`")))?;
        let mut z = AdditionVector::none(registry);
        z.include[pos] = true;
        Ok(z)
    }

    pub fn with_cap(mut self, cap: usize) -> Self {
        self.per_source_cap = Some(cap);
        self
    }

    pub fn with_subgroup(mut self, a: impl Into<String>) -> Self {
        self.subgroup_filter = Some(a.into());
        self
    }
}

/// The part of one source that `z` adds: subgroup-filtered, then capped.
pub fn addition_from_source(
    source: &DataSet,
    token: &str,
    subgroup_filter: Option<&str>,
    cap: Option<usize>,
    stratify: bool,
    seed: u64,
) -> Result<DataSet> {
    let pool = match subgroup_filter {
        Some(a) => source.subgroup_subset(a),
        None => source.clone(),
    };
    match cap {
        Some(cap) if pool.len() > cap => {
            let s = seeding::derive_seed(seed, &[Label::Str("compose"), Label::Str(token)]);
            draw_fixed(&pool, cap, s, stratify)
        }
        _ => Ok(pool),
    }
}

/// `D_* = D_train ∪ ⋃ z_i D_i`: train first, then included sources in registry order.
pub fn compose(train: &DataSet, registry: &SourceRegistry, z: &AdditionVector, seed: u64) -> Result<DataSet> {
    if z.include.len() != registry.len() {
        return Err(AuditError::domain(format!(
            "addition vector has {} flags for {} sources",
            z.include.len(),
            registry.len()
        )));
    }
    if z.per_source_cap == Some(0) {
        return Err(AuditError::domain("per-source cap must be at least 1"));
    }
    let mut out = train.clone();
    for ((token, data), &on) in registry.iter().zip(&z.include) {
        if on {
            let added = addition_from_source(data, token, z.subgroup_filter.as_deref(), z.per_source_cap, false, seed)?;
            out = out.concat(&added)?;
        }
    }
    Ok(out)
}
