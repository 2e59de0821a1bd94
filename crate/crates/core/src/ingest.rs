//! CSV ingestion into a [`SourceRegistry`] and the per-source subgroup summary.

use std::collections::HashSet;
use std::fmt;
use std::io::{Read, Write};
use std::path::Path;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::data::{DataSet, LabeledSample, SourceRegistry};
use crate::error::{AuditError, Result};

/// Which CSV columns hold features, label, subgroup and source.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TableSchema {
    pub feature_columns: Vec<String>,
    pub label_column: String,
    pub subgroup_column: String,
    pub source_column: String,
}

impl TableSchema {
    /// The layout written by [`write_registry_csv`]: `source,subgroup,label,f0..f{d-1}`.
    pub fn export_layout(feature_dim: usize) -> Self {
        TableSchema {
            feature_columns: (0..feature_dim).map(|i| format!("f{i}")).collect(),
            label_column: "label".into(),
            subgroup_column: "subgroup".into(),
            source_column: "source".into(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.feature_columns.is_empty() {
            return Err(AuditError::Schema("at least one feature column is required".into()));
        }
        let mut seen = HashSet::new();
        for name in self.all_columns() {
            if !seen.insert(name) {
                return Err(AuditError::Schema(format!("column `{name}` is listed twice")));
            }
        }
        Ok(())
    }

    fn all_columns(&self) -> impl Iterator<Item = &str> {
        [&self.source_column, &self.subgroup_column, &self.label_column]
            .into_iter()
            .chain(self.feature_columns.iter())
            .map(String::as_str)
    }
}

pub fn load_csv(path: impl AsRef<Path>, schema: &TableSchema) -> Result<SourceRegistry> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| AuditError::io(path, e))?;
    read_csv(file, schema)
}

/// Parses CSV from any reader. Fails on the first malformed row.
pub fn read_csv<R: Read>(reader: R, schema: &TableSchema) -> Result<SourceRegistry> {
    schema.validate()?;
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| AuditError::MissingColumn { column: name.to_string() })
    };
    let source_idx = col(&schema.source_column)?;
    let subgroup_idx = col(&schema.subgroup_column)?;
    let label_idx = col(&schema.label_column)?;
    let feature_idx: Vec<usize> = schema.feature_columns.iter().map(|c| col(c)).collect::<Result<_>>()?;

    let dim = feature_idx.len();
    let mut by_source: IndexMap<String, Vec<LabeledSample>> = IndexMap::new();
    for (i, record) in rdr.records().enumerate() {
        let record = record?;
        let row = i + 1;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        let err = |column: &str, message: String| AuditError::Parse {
            row,
            line,
            column: column.to_string(),
            message,
        };
        let label = match record.get(label_idx).map(str::trim) {
            Some("0") => 0,
            Some("1") => 1,
            other => {
                return Err(err(
                    &schema.label_column,
                    format!("label must be 0 or 1, got {:?}", other.unwrap_or("")),
                ))
            }
        };
        let mut features = Vec::with_capacity(dim);
        for (name, &idx) in schema.feature_columns.iter().zip(&feature_idx) {
            let cell = record.get(idx).unwrap_or("").trim();
            let v: f64 = cell
                .parse()
                .map_err(|_| err(name, format!("not a number: {cell:?}")))?;
            if !v.is_finite() {
                return Err(err(name, format!("non-finite value: {cell:?}")));
            }
            features.push(v);
        }
        let source = record.get(source_idx).unwrap_or("").to_string();
        let subgroup = record.get(subgroup_idx).unwrap_or("").to_string();
        by_source.entry(source.clone()).or_default().push(LabeledSample {
            features,
            label,
            subgroup,
            source,
        });
    }

    let mut registry = SourceRegistry::new();
    for (token, samples) in by_source {
        registry.insert(token, DataSet::new(samples, dim)?)?;
    }
    Ok(registry)
}

/// Loads several files and merges them; a source token may appear in only one file.
pub fn load_many<P: AsRef<Path>>(paths: &[P], schema: &TableSchema) -> Result<SourceRegistry> {
    let mut registry = SourceRegistry::new();
    for p in paths {
        registry.merge(load_csv(p, schema)?)?;
    }
    Ok(registry)
}

/// Writes the registry in the export layout; re-reading it with
/// [`TableSchema::export_layout`] gives back an equal registry.
pub fn write_registry_csv<W: Write>(registry: &SourceRegistry, writer: W) -> Result<()> {
    let dim = registry.feature_dim().unwrap_or(1);
    let schema = TableSchema::export_layout(dim);
    let mut wtr = csv::Writer::from_writer(writer);
    let mut header = vec![schema.source_column.clone(), schema.subgroup_column.clone(), schema.label_column.clone()];
    header.extend(schema.feature_columns.iter().cloned());
    wtr.write_record(&header)?;
    for (token, data) in registry.iter() {
        for s in data {
            let mut row = vec![token.to_string(), s.subgroup.clone(), s.label.to_string()];
            // `{}` on f64 prints the shortest string that parses back to the same bits
            row.extend(s.features.iter().map(|v| v.to_string()));
            wtr.write_record(&row)?;
        }
    }
    wtr.flush().map_err(|e| AuditError::io("<csv>", e))?;
    Ok(())
}

pub fn save_registry_csv(registry: &SourceRegistry, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| AuditError::io(path, e))?;
    write_registry_csv(registry, std::io::BufWriter::new(file))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub source: String,
    /// `None` marks the per-source total row.
    pub subgroup: Option<String>,
    pub count: usize,
    pub ratio: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RegistrySummary {
    pub rows: Vec<SummaryRow>,
}

impl RegistrySummary {
    pub fn row(&self, source: &str, subgroup: &str) -> Option<&SummaryRow> {
        self.rows
            .iter()
            .find(|r| r.source == source && r.subgroup.as_deref() == Some(subgroup))
    }

    pub fn total(&self, source: &str) -> Option<&SummaryRow> {
        self.rows.iter().find(|r| r.source == source && r.subgroup.is_none())
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

impl fmt::Display for RegistrySummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<16} {:<16} {:>8} {:>8}", "source", "subgroup", "count", "ratio")?;
        for r in &self.rows {
            let sub = r.subgroup.as_deref().unwrap_or("(total)");
            writeln!(f, "{:<16} {:<16} {:>8} {:>8.4}", r.source, sub, r.count, r.ratio)?;
        }
        Ok(())
    }
}

/// One row per (source, subgroup) with count and ratio, followed by a total
/// row for each source.
pub fn registry_summary(r: &SourceRegistry) -> RegistrySummary {
    let mut rows = Vec::new();
    for (token, data) in r.iter() {
        let n = data.len();
        for (subgroup, count) in data.subgroup_counts() {
            rows.push(SummaryRow {
                source: token.to_string(),
                subgroup: Some(subgroup),
                count,
                ratio: count as f64 / n as f64,
            });
        }
        rows.push(SummaryRow {
            source: token.to_string(),
            subgroup: None,
            count: n,
            ratio: if n == 0 { 0.0 } else { 1.0 },
        });
    }
    RegistrySummary { rows }
}
