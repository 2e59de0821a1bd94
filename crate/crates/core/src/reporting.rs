//! Stable JSON/CSV artifacts built from protocol results.
//!
//! Every document carries `schema_version` and a `kind` tag. Floats are
//! written with 17 significant digits so that a parse recovers the exact
//! value; absent slices are `null`.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::ser::{Formatter, PrettyFormatter};

use crate::error::{AuditError, Result};
use crate::metrics::{pearson_r, DEFAULT_PERMUTATIONS, OVERALL};
use crate::protocols::{pareto_indices, AdditionMode, DeltaRecord, ExperimentConfig, FoldStat, SliceDelta};
use crate::seeding::{derive_seed, Label};

pub const SCHEMA_VERSION: u32 = 1;

pub const KIND_RESULT_SET: &str = "result_set";
pub const KIND_HEATMAP: &str = "heatmap";
pub const KIND_SCATTER: &str = "scatter";
pub const KIND_BMW: &str = "bmw_summary";
pub const KIND_PARETO: &str = "pareto";

/// How the `±` spread in every document is computed.
pub const SPREAD_NOTE: &str = "sample standard deviation across folds (n - 1 denominator)";
pub const MEDIAN_NOTE: &str = "lower median: element floor((n - 1) / 2) of the ascending order";

// ---------------------------------------------------------------------------
// number formatting

/// Pretty JSON whose floats always carry 17 significant digits.
struct ExactFloats<'a>(PrettyFormatter<'a>);

macro_rules! delegate {
    ($($name:ident($($arg:ident: $ty:ty),*);)*) => {
        $(
            fn $name<W: ?Sized + std::io::Write>(&mut self, w: &mut W $(, $arg: $ty)*) -> std::io::Result<()> {
                self.0.$name(w $(, $arg)*)
            }
        )*
    };
}

impl Formatter for ExactFloats<'_> {
    delegate! {
        begin_array();
        end_array();
        begin_array_value(first: bool);
        end_array_value();
        begin_object();
        end_object();
        begin_object_key(first: bool);
        begin_object_value();
        end_object_value();
    }

    fn write_f64<W: ?Sized + std::io::Write>(&mut self, w: &mut W, value: f64) -> std::io::Result<()> {
        w.write_all(format_number(value).as_bytes())
    }

    fn write_f32<W: ?Sized + std::io::Write>(&mut self, w: &mut W, value: f32) -> std::io::Result<()> {
        self.write_f64(w, f64::from(value))
    }
}

/// `value` in scientific notation with 17 significant digits.
pub fn format_number(value: f64) -> String {
    let v = if value == 0.0 { 0.0 } else { value };
    format!("{v:.16e}")
}

/// Serializes any document with the exact-float pretty formatter.
pub fn to_json_string<T: Serialize + ?Sized>(value: &T) -> Result<String> {
    let mut buf = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut buf, ExactFloats(PrettyFormatter::with_indent(b"  ")));
    value.serialize(&mut ser)?;
    buf.push(b'\n');
    Ok(String::from_utf8(buf).expect("serde_json writes UTF-8"))
}

pub fn write_json<T: Serialize + ?Sized>(path: impl AsRef<Path>, value: &T) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, to_json_string(value)?).map_err(|e| AuditError::io(path, e))
}

pub fn write_text(path: impl AsRef<Path>, text: &str) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, text).map_err(|e| AuditError::io(path, e))
}

#[derive(Deserialize)]
struct Header {
    schema_version: u32,
    kind: String,
}

/// Parses a document after checking its version and kind tag.
pub fn parse_document<T: DeserializeOwned>(text: &str, kind: &str) -> Result<T> {
    let header: Header = serde_json::from_str(text)?;
    if header.schema_version != SCHEMA_VERSION {
        return Err(AuditError::Schema(format!(
            "schema_version {} is not supported (expected {SCHEMA_VERSION})",
            header.schema_version
        )));
    }
    if header.kind != kind {
        return Err(AuditError::Schema(format!("expected a `{kind}` document, found `{}`", header.kind)));
    }
    Ok(serde_json::from_str(text)?)
}

// ---------------------------------------------------------------------------
// result sets

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub seed: u64,
    pub version: String,
    /// Seconds since the Unix epoch; the only field that varies between runs.
    pub timestamp_unix: u64,
    pub spread: String,
}

impl Provenance {
    pub fn new(seed: u64, timestamp_unix: u64) -> Self {
        Provenance {
            seed,
            version: format!("subgroup-audit {}", env!("CARGO_PKG_VERSION")),
            timestamp_unix,
            spread: SPREAD_NOTE.to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultSet {
    pub schema_version: u32,
    pub kind: String,
    pub protocol: String,
    pub config: ExperimentConfig,
    pub records: Vec<DeltaRecord>,
    pub provenance: Provenance,
}

impl ResultSet {
    pub fn new(protocol: &str, config: ExperimentConfig, records: Vec<DeltaRecord>, timestamp_unix: u64) -> Result<Self> {
        let rs = ResultSet {
            schema_version: SCHEMA_VERSION,
            kind: KIND_RESULT_SET.to_string(),
            protocol: protocol.to_string(),
            provenance: Provenance::new(config.seed, timestamp_unix),
            config,
            records,
        };
        rs.validate()?;
        Ok(rs)
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = BTreeSet::new();
        for r in &self.records {
            if !seen.insert(r.key()) {
                return Err(AuditError::Schema(format!("duplicate record key `{}`", r.key())));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        to_json_string(self)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let rs: ResultSet = parse_document(text, KIND_RESULT_SET)?;
        rs.validate()?;
        Ok(rs)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| AuditError::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_json(path, self)
    }

    pub fn record(&self, key: &str) -> Option<&DeltaRecord> {
        self.records.iter().find(|r| r.key().to_string() == key)
    }
}

// ---------------------------------------------------------------------------
// metric tags

/// A per-slice quantity of a [`DeltaRecord`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricTag {
    DeltaAccuracy,
    DeltaAuc,
    DeltaDisc,
    DeltaRatio,
    SamplesAdded,
    BaseAccuracy,
    AfterAccuracy,
    BaseDisc,
    AfterDisc,
}

impl MetricTag {
    pub const ALL: [MetricTag; 9] = [
        MetricTag::DeltaAccuracy,
        MetricTag::DeltaAuc,
        MetricTag::DeltaDisc,
        MetricTag::DeltaRatio,
        MetricTag::SamplesAdded,
        MetricTag::BaseAccuracy,
        MetricTag::AfterAccuracy,
        MetricTag::BaseDisc,
        MetricTag::AfterDisc,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            MetricTag::DeltaAccuracy => "delta_accuracy",
            MetricTag::DeltaAuc => "delta_auc",
            MetricTag::DeltaDisc => "delta_disc",
            MetricTag::DeltaRatio => "delta_ratio",
            MetricTag::SamplesAdded => "samples_added",
            MetricTag::BaseAccuracy => "base_accuracy",
            MetricTag::AfterAccuracy => "after_accuracy",
            MetricTag::BaseDisc => "base_disc",
            MetricTag::AfterDisc => "after_disc",
        }
    }

    /// Accepts the canonical names and the short forms `accuracy`, `auc`,
    /// `disc` and `ratio` for the deltas.
    pub fn parse(tag: &str) -> Result<Self> {
        let canonical = match tag {
            "accuracy" => "delta_accuracy",
            "auc" => "delta_auc",
            "disc" | "mean_discrepancy" => "delta_disc",
            "ratio" => "delta_ratio",
            other => other,
        };
        MetricTag::ALL
            .into_iter()
            .find(|m| m.as_str() == canonical)
            .ok_or_else(|| AuditError::domain(format!("unknown metric tag `{tag}`")))
    }

    pub fn stat(self, s: &SliceDelta) -> Option<FoldStat> {
        match self {
            MetricTag::DeltaAccuracy => Some(s.delta_accuracy),
            MetricTag::DeltaAuc => s.delta_auc,
            MetricTag::DeltaDisc => Some(s.delta_disc),
            MetricTag::DeltaRatio => Some(s.delta_ratio),
            MetricTag::SamplesAdded => Some(s.samples_added),
            MetricTag::BaseAccuracy => Some(s.base.accuracy),
            MetricTag::AfterAccuracy => Some(s.after.accuracy),
            MetricTag::BaseDisc => Some(s.base.mean_discrepancy),
            MetricTag::AfterDisc => Some(s.after.mean_discrepancy),
        }
    }
}

impl std::str::FromStr for MetricTag {
    type Err = AuditError;
    fn from_str(s: &str) -> Result<Self> {
        MetricTag::parse(s)
    }
}

// ---------------------------------------------------------------------------
// heatmap

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeatmapDoc {
    pub schema_version: u32,
    pub kind: String,
    pub metric: MetricTag,
    pub subgroup: String,
    /// Target sources.
    pub rows: Vec<String>,
    /// Added sources; the cell where row and column agree is the control.
    pub columns: Vec<String>,
    pub cells: Vec<Vec<Option<f64>>>,
    pub std: Vec<Vec<Option<f64>>>,
    pub cell_keys: Vec<Vec<Option<String>>>,
    pub spread: String,
}

/// Target × added-source matrix of fold-mean values of `metric` on one slice.
pub fn emit_heatmap(rs: &ResultSet, metric: MetricTag, subgroup: &str) -> Result<HeatmapDoc> {
    let records: Vec<&DeltaRecord> = rs
        .records
        .iter()
        .filter(|r| matches!(r.mode, AdditionMode::WholeSource | AdditionMode::Control) && r.subgroup_filter.is_none())
        .collect();
    if records.is_empty() {
        return Err(AuditError::domain("heatmap needs whole_source or control records"));
    }
    let mut rows: Vec<String> = Vec::new();
    let mut columns: Vec<String> = Vec::new();
    for r in &records {
        let added = r.added.clone().expect("whole-source records name their added source");
        if !rows.contains(&r.target) {
            rows.push(r.target.clone());
        }
        if !columns.contains(&added) {
            columns.push(added);
        }
    }
    let mut cells = vec![vec![None; columns.len()]; rows.len()];
    let mut std = cells.clone();
    let mut cell_keys = vec![vec![None; columns.len()]; rows.len()];
    for r in records {
        let i = rows.iter().position(|t| *t == r.target).expect("row collected");
        let j = columns.iter().position(|a| Some(a) == r.added.as_ref()).expect("column collected");
        cell_keys[i][j] = Some(r.key().to_string());
        if let Some(stat) = r.slice(subgroup).and_then(|s| metric.stat(s)) {
            cells[i][j] = Some(stat.mean);
            std[i][j] = Some(stat.std);
        }
    }
    Ok(HeatmapDoc {
        schema_version: SCHEMA_VERSION,
        kind: KIND_HEATMAP.to_string(),
        metric,
        subgroup: subgroup.to_string(),
        rows,
        columns,
        cells,
        std,
        cell_keys,
        spread: SPREAD_NOTE.to_string(),
    })
}

/// Flat `target,added,value,std,key` projection of a heatmap.
pub fn heatmap_csv(doc: &HeatmapDoc) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["target", "added", "value", "std", "key"])?;
    for (i, t) in doc.rows.iter().enumerate() {
        for (j, a) in doc.columns.iter().enumerate() {
            w.write_record([
                t.as_str(),
                a.as_str(),
                &opt_number(doc.cells[i][j]),
                &opt_number(doc.std[i][j]),
                doc.cell_keys[i][j].as_deref().unwrap_or(""),
            ])?;
        }
    }
    finish_csv(w)
}

fn opt_number(v: Option<f64>) -> String {
    v.map(format_number).unwrap_or_default()
}

fn finish_csv(w: csv::Writer<Vec<u8>>) -> Result<String> {
    let bytes = w.into_inner().map_err(|e| AuditError::domain(format!("csv flush failed: {e}")))?;
    Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
}

// ---------------------------------------------------------------------------
// scatter

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScatterPoint {
    pub key: String,
    pub x: f64,
    pub y: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScatterGroup {
    pub subgroup: String,
    pub points: Vec<ScatterPoint>,
    /// `None` when r is undefined (fewer than 3 points or a constant column).
    pub correlation: Option<crate::metrics::Correlation>,
    pub undefined_reason: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScatterDoc {
    pub schema_version: u32,
    pub kind: String,
    pub x: MetricTag,
    pub y: MetricTag,
    pub modes: Vec<AdditionMode>,
    pub groups: Vec<ScatterGroup>,
}

/// Modes that count as data additions in scatter and Pareto documents.
fn is_addition(mode: AdditionMode) -> bool {
    matches!(mode, AdditionMode::WholeSource | AdditionMode::Control | AdditionMode::SubgroupLevel)
}

fn groups_of(rs: &ResultSet, group_by: Option<&[String]>) -> Vec<String> {
    match group_by {
        Some(g) => g.to_vec(),
        None => {
            let mut all: BTreeSet<String> = BTreeSet::new();
            for r in &rs.records {
                all.extend(r.subgroups.keys().cloned());
            }
            std::iter::once(OVERALL.to_string()).chain(all).collect()
        }
    }
}

pub fn emit_scatter(rs: &ResultSet, x: MetricTag, y: MetricTag, group_by: Option<&[String]>) -> Result<ScatterDoc> {
    emit_scatter_with(rs, x, y, group_by, DEFAULT_PERMUTATIONS)
}

/// One point per addition record and slice, with a per-group Pearson r and
/// permutation p-value.
pub fn emit_scatter_with(
    rs: &ResultSet,
    x: MetricTag,
    y: MetricTag,
    group_by: Option<&[String]>,
    permutations: usize,
) -> Result<ScatterDoc> {
    let records: Vec<&DeltaRecord> = rs.records.iter().filter(|r| is_addition(r.mode)).collect();
    if records.is_empty() {
        return Err(AuditError::domain("scatter needs data-addition records"));
    }
    let mut modes: Vec<AdditionMode> = records.iter().map(|r| r.mode).collect::<BTreeSet<_>>().into_iter().collect();
    modes.sort();
    let groups = groups_of(rs, group_by)
        .into_iter()
        .map(|g| {
            let points: Vec<ScatterPoint> = records
                .iter()
                .filter_map(|r| {
                    let s = r.slice(&g)?;
                    Some(ScatterPoint {
                        key: r.key().to_string(),
                        x: x.stat(s)?.mean,
                        y: y.stat(s)?.mean,
                    })
                })
                .collect();
            let xs: Vec<f64> = points.iter().map(|p| p.x).collect();
            let ys: Vec<f64> = points.iter().map(|p| p.y).collect();
            let seed = derive_seed(rs.provenance.seed, &[Label::Str("scatter"), Label::Str(x.as_str()), Label::Str(y.as_str()), Label::Str(&g)]);
            let (correlation, undefined_reason) = match pearson_r(&xs, &ys, permutations, seed) {
                Ok(c) => (Some(c), None),
                Err(e) => (None, Some(e.to_string())),
            };
            ScatterGroup {
                subgroup: g,
                points,
                correlation,
                undefined_reason,
            }
        })
        .collect();
    Ok(ScatterDoc {
        schema_version: SCHEMA_VERSION,
        kind: KIND_SCATTER.to_string(),
        x,
        y,
        modes,
        groups,
    })
}

pub fn scatter_csv(doc: &ScatterDoc) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["subgroup", "key", doc.x.as_str(), doc.y.as_str()])?;
    for g in &doc.groups {
        for p in &g.points {
            w.write_record([g.subgroup.as_str(), p.key.as_str(), &format_number(p.x), &format_number(p.y)])?;
        }
    }
    finish_csv(w)
}

// ---------------------------------------------------------------------------
// best / median / worst

/// One order statistic of fold-mean Δaccuracy, with its fold spread.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedValue {
    pub mean: f64,
    pub std: f64,
    /// The added source attaining it; absent in averaged tables.
    pub source: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BmwCell {
    pub without_cal: RankedValue,
    pub with_cal: RankedValue,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BmwRow {
    /// `best`, `median` or `worst`.
    pub rank: String,
    pub cells: BTreeMap<String, BmwCell>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BmwTable {
    /// `None` for the table averaged over targets.
    pub target: Option<String>,
    pub n_sources: usize,
    pub rows: Vec<BmwRow>,
    /// best(without calibration) − worst(with calibration), per slice.
    pub best_minus_worst_cal: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BmwSummary {
    pub schema_version: u32,
    pub kind: String,
    pub columns: Vec<String>,
    pub median: String,
    pub spread: String,
    pub per_target: Vec<BmwTable>,
    pub average: BmwTable,
}

const RANKS: [&str; 3] = ["best", "median", "worst"];

/// Best, lower median and worst of `(mean, std, source)` by mean; ties keep
/// input order.
fn order_stats(mut values: Vec<(f64, f64, String)>) -> [RankedValue; 3] {
    values.sort_by(|a, b| b.0.total_cmp(&a.0));
    let n = values.len();
    // descending order: the lower median sits at index n / 2
    let pick = |i: usize| RankedValue {
        mean: values[i].0,
        std: values[i].1,
        source: Some(values[i].2.clone()),
    };
    [pick(0), pick(n / 2), pick(n - 1)]
}

fn slice_values(records: &[&DeltaRecord], slice: &str) -> Vec<(f64, f64, String)> {
    records
        .iter()
        .filter_map(|r| {
            let s = r.slice(slice)?;
            Some((s.delta_accuracy.mean, s.delta_accuracy.std, r.added.clone().unwrap_or_default()))
        })
        .collect()
}

fn target_table(target: &str, plain: &[&DeltaRecord], cal: &[&DeltaRecord], columns: &[String]) -> BmwTable {
    let mut rows: Vec<BmwRow> = RANKS
        .iter()
        .map(|r| BmwRow {
            rank: r.to_string(),
            cells: BTreeMap::new(),
        })
        .collect();
    let mut diff = BTreeMap::new();
    for c in columns {
        let (p, q) = (slice_values(plain, c), slice_values(cal, c));
        if p.is_empty() || q.is_empty() {
            continue;
        }
        let (p, q) = (order_stats(p), order_stats(q));
        diff.insert(c.clone(), p[0].mean - q[2].mean);
        for (row, (a, b)) in rows.iter_mut().zip(p.into_iter().zip(q)) {
            row.cells.insert(c.clone(), BmwCell { without_cal: a, with_cal: b });
        }
    }
    BmwTable {
        target: Some(target.to_string()),
        n_sources: plain.len(),
        rows,
        best_minus_worst_cal: diff,
    }
}

fn average_tables(tables: &[BmwTable], columns: &[String]) -> BmwTable {
    let mean_of = |vals: Vec<f64>| vals.iter().sum::<f64>() / vals.len() as f64;
    let mut rows = Vec::new();
    for (ri, rank) in RANKS.iter().enumerate() {
        let mut cells = BTreeMap::new();
        for c in columns {
            let present: Vec<&BmwCell> = tables.iter().filter_map(|t| t.rows[ri].cells.get(c)).collect();
            if present.is_empty() {
                continue;
            }
            let avg = |f: &dyn Fn(&BmwCell) -> &RankedValue| RankedValue {
                mean: mean_of(present.iter().map(|x| f(x).mean).collect()),
                std: mean_of(present.iter().map(|x| f(x).std).collect()),
                source: None,
            };
            cells.insert(
                c.clone(),
                BmwCell {
                    without_cal: avg(&|x| &x.without_cal),
                    with_cal: avg(&|x| &x.with_cal),
                },
            );
        }
        rows.push(BmwRow {
            rank: rank.to_string(),
            cells,
        });
    }
    let mut diff = BTreeMap::new();
    for c in columns {
        let vals: Vec<f64> = tables.iter().filter_map(|t| t.best_minus_worst_cal.get(c).copied()).collect();
        if !vals.is_empty() {
            diff.insert(c.clone(), mean_of(vals));
        }
    }
    BmwTable {
        target: None,
        n_sources: tables.iter().map(|t| t.n_sources).max().unwrap_or(0),
        rows,
        best_minus_worst_cal: diff,
    }
}

/// Best/Median/Worst Whole-Source Δaccuracy across added sources, with and
/// without calibration, per target and averaged over targets. Control cells
/// (added = target) are excluded.
pub fn summarize_records(records: &[DeltaRecord]) -> Result<BmwSummary> {
    let mut targets: Vec<&str> = Vec::new();
    let mut plain: BTreeMap<&str, Vec<&DeltaRecord>> = BTreeMap::new();
    let mut cal: BTreeMap<&str, Vec<&DeltaRecord>> = BTreeMap::new();
    for r in records.iter().filter(|r| r.subgroup_filter.is_none()) {
        let bucket = match r.mode {
            AdditionMode::WholeSource => &mut plain,
            AdditionMode::WholeSourceCalibrated => &mut cal,
            _ => continue,
        };
        if !targets.contains(&r.target.as_str()) {
            targets.push(&r.target);
        }
        bucket.entry(&r.target).or_default().push(r);
    }
    if targets.is_empty() {
        return Err(AuditError::domain("summary needs whole_source and whole_source_calibrated records"));
    }
    let mut slices: BTreeSet<String> = BTreeSet::new();
    for r in plain.values().chain(cal.values()).flatten() {
        slices.extend(r.subgroups.keys().cloned());
    }
    let columns: Vec<String> = std::iter::once(OVERALL.to_string()).chain(slices).collect();
    let mut tables = Vec::new();
    for t in targets {
        let (Some(p), Some(c)) = (plain.get(t), cal.get(t)) else {
            return Err(AuditError::domain(format!(
                "target `{t}` is missing its {} arm",
                if plain.contains_key(t) { "calibrated" } else { "uncalibrated" }
            )));
        };
        tables.push(target_table(t, p, c, &columns));
    }
    let average = average_tables(&tables, &columns);
    Ok(BmwSummary {
        schema_version: SCHEMA_VERSION,
        kind: KIND_BMW.to_string(),
        columns,
        median: MEDIAN_NOTE.to_string(),
        spread: SPREAD_NOTE.to_string(),
        per_target: tables,
        average,
    })
}

pub fn summarize_bmw(rs: &ResultSet) -> Result<BmwSummary> {
    summarize_records(&rs.records)
}

/// The averaged table as rows `rank,slice,without_cal_mean,...`.
pub fn bmw_csv(doc: &BmwSummary) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["target", "rank", "slice", "without_cal_mean", "without_cal_std", "with_cal_mean", "with_cal_std"])?;
    for t in doc.per_target.iter().chain(std::iter::once(&doc.average)) {
        for row in &t.rows {
            for (slice, cell) in &row.cells {
                w.write_record([
                    t.target.as_deref().unwrap_or("average"),
                    row.rank.as_str(),
                    slice.as_str(),
                    &format_number(cell.without_cal.mean),
                    &format_number(cell.without_cal.std),
                    &format_number(cell.with_cal.mean),
                    &format_number(cell.with_cal.std),
                ])?;
            }
        }
    }
    finish_csv(w)
}

// ---------------------------------------------------------------------------
// pareto

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParetoPoint {
    pub key: String,
    pub overall: f64,
    pub subgroup: f64,
    pub on_frontier: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParetoDoc {
    pub schema_version: u32,
    pub kind: String,
    pub subgroup: String,
    pub points: Vec<ParetoPoint>,
    pub frontier: Vec<String>,
}

/// (overall Δaccuracy, subgroup Δaccuracy) per addition record and its
/// non-dominated subset.
pub fn emit_pareto(rs: &ResultSet, subgroup: &str) -> Result<ParetoDoc> {
    let mut points: Vec<ParetoPoint> = rs
        .records
        .iter()
        .filter(|r| is_addition(r.mode))
        .filter_map(|r| {
            Some(ParetoPoint {
                key: r.key().to_string(),
                overall: r.overall.delta_accuracy.mean,
                subgroup: r.subgroups.get(subgroup)?.delta_accuracy.mean,
                on_frontier: false,
            })
        })
        .collect();
    if points.is_empty() {
        return Err(AuditError::domain(format!("no addition records carry subgroup `{subgroup}`")));
    }
    let coords: Vec<(f64, f64)> = points.iter().map(|p| (p.overall, p.subgroup)).collect();
    let front = pareto_indices(&coords);
    for &i in &front {
        points[i].on_frontier = true;
    }
    Ok(ParetoDoc {
        schema_version: SCHEMA_VERSION,
        kind: KIND_PARETO.to_string(),
        subgroup: subgroup.to_string(),
        frontier: front.iter().map(|&i| points[i].key.clone()).collect(),
        points,
    })
}

// ---------------------------------------------------------------------------
// flat record export

/// One row per (record, slice) with every fold statistic.
pub fn records_csv(rs: &ResultSet) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["key".to_string(), "target".into(), "added".into(), "mode".into(), "subgroup_filter".into(), "slice".into()];
    for m in MetricTag::ALL {
        header.push(format!("{}_mean", m.as_str()));
        header.push(format!("{}_std", m.as_str()));
    }
    w.write_record(&header)?;
    for r in &rs.records {
        for (slice, s) in r.entries() {
            let mut row = vec![
                r.key().to_string(),
                r.target.clone(),
                r.added.clone().unwrap_or_default(),
                r.mode.as_str().to_string(),
                r.subgroup_filter.clone().unwrap_or_default(),
                slice.to_string(),
            ];
            for m in MetricTag::ALL {
                let st = m.stat(s);
                row.push(opt_number(st.map(|v| v.mean)));
                row.push(opt_number(st.map(|v| v.std)));
            }
            w.write_record(&row)?;
        }
    }
    finish_csv(w)
}

pub fn write_csv(path: impl AsRef<Path>, text: &str) -> Result<()> {
    let path = path.as_ref();
    let mut f = std::fs::File::create(path).map_err(|e| AuditError::io(path, e))?;
    f.write_all(text.as_bytes()).map_err(|e| AuditError::io(path, e))
}
