//! The `subaudit` batch command line.
//!
//! Exit codes: 0 on success, 2 for input or data errors, 64 for usage errors.

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand, ValueEnum};
use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::data::SourceRegistry;
use crate::error::{AuditError, Result};
use crate::ingest::{load_many, registry_summary, save_registry_csv, TableSchema};
use crate::metrics::{DEFAULT_PERMUTATIONS, OVERALL};
use crate::model::{LogisticHyper, LogisticTrainer};
use crate::protocols::{
    run_baseline_grid, run_calibration_grid, run_subgroup_level_grid, run_whole_source_grid, ExperimentConfig,
};
use crate::reporting::{
    bmw_csv, emit_heatmap, emit_pareto, emit_scatter_with, heatmap_csv, records_csv, scatter_csv, summarize_bmw,
    write_json, write_text, MetricTag, ResultSet, SCHEMA_VERSION,
};
use crate::selection::{select_for_target, Criterion, SelectionConfig, SelectionOutcome};
use crate::synth::{generate_registry, SyntheticSpec};

pub const EXIT_OK: i32 = 0;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_USAGE: i32 = 64;

// ---------------------------------------------------------------------------
// config file

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum InputConfig {
    Csv {
        paths: Vec<PathBuf>,
        schema: TableSchema,
    },
    Synthetic {
        spec: SyntheticSpec,
        /// Samples per source, in registry order.
        sizes: IndexMap<String, usize>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum Protocol {
    Baseline,
    WholeSource,
    SubgroupLevel,
    Calibration,
}

impl Protocol {
    pub fn as_str(self) -> &'static str {
        match self {
            Protocol::Baseline => "baseline",
            Protocol::WholeSource => "whole_source",
            Protocol::SubgroupLevel => "subgroup_level",
            Protocol::Calibration => "calibration",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SelectionSection {
    pub criteria: Vec<Criterion>,
    pub subgroup: Option<String>,
    pub target: Option<String>,
    #[serde(flatten)]
    pub config: SelectionConfig,
}

impl Default for SelectionSection {
    fn default() -> Self {
        SelectionSection {
            criteria: Vec::new(),
            subgroup: None,
            target: None,
            config: SelectionConfig::default(),
        }
    }
}

/// Top-level JSON config shared by every command. Relative paths are
/// resolved against the config file's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub input: InputConfig,
    #[serde(default)]
    pub experiment: ExperimentConfig,
    #[serde(default)]
    pub model: LogisticHyper,
    #[serde(default = "default_protocols")]
    pub protocols: Vec<Protocol>,
    #[serde(default)]
    pub targets: Option<Vec<String>>,
    #[serde(default)]
    pub subgroups: Option<Vec<String>>,
    #[serde(default)]
    pub selection: SelectionSection,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
}

fn default_protocols() -> Vec<Protocol> {
    vec![Protocol::Baseline, Protocol::WholeSource]
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| AuditError::io(path, e))?;
        let mut cfg: RunConfig =
            serde_json::from_str(&text).map_err(|e| AuditError::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        if let InputConfig::Csv { paths, .. } = &mut cfg.input {
            for p in paths.iter_mut() {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            }
        }
        if cfg.output_dir.is_relative() {
            cfg.output_dir = base.join(&cfg.output_dir);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.experiment.validate()?;
        self.model.validate()?;
        match &self.input {
            InputConfig::Csv { paths, schema } => {
                if paths.is_empty() {
                    return Err(AuditError::Config("csv input needs at least one path".into()));
                }
                schema.validate()
            }
            InputConfig::Synthetic { spec, sizes } => {
                spec.validate()?;
                if sizes.is_empty() {
                    return Err(AuditError::Config("synthetic input needs at least one entry in `sizes`".into()));
                }
                Ok(())
            }
        }
    }

    pub fn load_registry(&self) -> Result<SourceRegistry> {
        match &self.input {
            InputConfig::Csv { paths, schema } => load_many(paths, schema),
            InputConfig::Synthetic { spec, sizes } => {
                let sizes: Vec<(String, usize)> = sizes.iter().map(|(k, v)| (k.clone(), *v)).collect();
                generate_registry(spec, &sizes)
            }
        }
    }

    pub fn trainer(&self) -> LogisticTrainer {
        LogisticTrainer {
            hyper: self.model,
            threshold: self.experiment.threshold,
        }
    }
}

// ---------------------------------------------------------------------------
// argument parsing

#[derive(Debug, Parser)]
#[command(name = "subaudit", version, about = "Audit per-subgroup effects of adding training data from other sources")]
pub struct Cli {
    /// Worker threads (default: all cores). Output bytes do not depend on it.
    #[arg(long, global = true, value_parser = clap::value_parser!(u16).range(1..))]
    pub jobs: Option<u16>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// JSON run configuration.
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory (overrides `output_dir`).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Master seed (overrides `experiment.seed` and `selection.seed`).
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SummaryKind {
    Bmw,
}

fn parse_criterion(s: &str) -> std::result::Result<Criterion, String> {
    Criterion::parse(s).map_err(|_| {
        let names: Vec<&str> = Criterion::ALL.iter().map(|c| c.flag()).collect();
        format!("expected one of {}", names.join(", "))
    })
}

fn parse_metric(s: &str) -> std::result::Result<MetricTag, String> {
    MetricTag::parse(s).map_err(|e| e.to_string())
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Load the configured sources, print the subgroup summary and cache them as CSV.
    Ingest(Common),
    /// Generate the configured synthetic sources and write them as CSV.
    Synth(Common),
    /// Run the configured protocols and write one result set per protocol.
    Run {
        #[command(flatten)]
        common: Common,
        /// Protocols to run (overrides `protocols`).
        #[arg(long, value_enum, value_delimiter = ',')]
        protocols: Option<Vec<Protocol>>,
    },
    /// Pick a source for a subgroup and print the outcome as JSON.
    Select {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_parser = parse_criterion)]
        criterion: Criterion,
        /// Target source; excluded from the candidates.
        #[arg(long)]
        target: Option<String>,
        #[arg(long)]
        subgroup: Option<String>,
    },
    /// Turn result sets into heatmap, scatter, summary and Pareto documents.
    Report {
        /// Result set JSON files.
        #[arg(long = "input", required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_parser = parse_metric)]
        heatmap: Option<MetricTag>,
        /// Slice for heatmaps.
        #[arg(long, default_value = OVERALL)]
        subgroup: String,
        #[arg(long, num_args = 2, value_names = ["X", "Y"], value_parser = parse_metric)]
        scatter: Option<Vec<MetricTag>>,
        #[arg(long, value_enum)]
        summary: Option<SummaryKind>,
        /// Subgroup for the Pareto document.
        #[arg(long)]
        pareto: Option<String>,
        #[arg(long, default_value_t = DEFAULT_PERMUTATIONS)]
        permutations: usize,
    },
}

// ---------------------------------------------------------------------------
// commands

fn load_config(c: &Common) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(&c.config)?;
    if let Some(out) = &c.out {
        cfg.output_dir = out.clone();
    }
    if let Some(seed) = c.seed {
        cfg.experiment.seed = seed;
        cfg.selection.config.seed = seed;
    }
    Ok(cfg)
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| AuditError::io(dir, e))
}

fn now_unix() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

fn cmd_ingest(c: &Common, require_synthetic: bool) -> Result<()> {
    let cfg = load_config(c)?;
    if require_synthetic && !matches!(cfg.input, InputConfig::Synthetic { .. }) {
        return Err(AuditError::Config("`synth` needs a synthetic input section".into()));
    }
    let registry = cfg.load_registry()?;
    print!("{}", registry_summary(&registry));
    ensure_dir(&cfg.output_dir)?;
    let path = cfg.output_dir.join("registry.csv");
    save_registry_csv(&registry, &path)?;
    println!("wrote {}", path.display());
    Ok(())
}

fn cmd_run(c: &Common, protocols: Option<&[Protocol]>) -> Result<()> {
    let cfg = load_config(c)?;
    let registry = cfg.load_registry()?;
    let trainer = cfg.trainer();
    let targets = cfg.targets.as_deref();
    ensure_dir(&cfg.output_dir)?;
    let protocols = protocols.unwrap_or(&cfg.protocols);
    for &p in protocols {
        let exp = &cfg.experiment;
        let records = match p {
            Protocol::Baseline => run_baseline_grid(targets, &registry, exp, &trainer)?,
            Protocol::WholeSource => run_whole_source_grid(targets, &registry, exp, &trainer)?,
            Protocol::SubgroupLevel => run_subgroup_level_grid(targets, cfg.subgroups.as_deref(), &registry, exp, &trainer)?,
            Protocol::Calibration => run_calibration_grid(targets, &registry, exp, &trainer)?,
        };
        let rs = ResultSet::new(p.as_str(), exp.clone(), records, now_unix())?;
        let json = cfg.output_dir.join(format!("resultset_{}.json", p.as_str()));
        rs.save(&json)?;
        let csv = cfg.output_dir.join(format!("records_{}.csv", p.as_str()));
        write_text(&csv, &records_csv(&rs)?)?;
        println!("wrote {}", json.display());
        println!("wrote {}", csv.display());
    }
    Ok(())
}

#[derive(Debug, Serialize)]
struct SelectionDoc<'a> {
    schema_version: u32,
    kind: &'static str,
    target: Option<&'a str>,
    outcome: &'a SelectionOutcome,
}

fn cmd_select(c: &Common, criterion: Criterion, target: Option<&str>, subgroup: Option<&str>) -> Result<()> {
    let cfg = load_config(c)?;
    let target = target.or(cfg.selection.target.as_deref());
    let subgroup = subgroup
        .or(cfg.selection.subgroup.as_deref())
        .ok_or_else(|| AuditError::Config("a subgroup is required (--subgroup or selection.subgroup)".into()))?;
    let registry = cfg.load_registry()?;
    let outcome = select_for_target(criterion, target, subgroup, &registry, &cfg.experiment, &cfg.selection.config, &cfg.trainer())?;
    let doc = SelectionDoc {
        schema_version: SCHEMA_VERSION,
        kind: "selection",
        target,
        outcome: &outcome,
    };
    print!("{}", crate::reporting::to_json_string(&doc)?);
    Ok(())
}

fn file_safe(s: &str) -> String {
    s.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' }).collect()
}

#[allow(clippy::too_many_arguments)]
fn cmd_report(
    inputs: &[PathBuf],
    out: &Path,
    heatmap: Option<MetricTag>,
    subgroup: &str,
    scatter: Option<&[MetricTag]>,
    summary: Option<SummaryKind>,
    pareto: Option<&str>,
    permutations: usize,
) -> Result<()> {
    if heatmap.is_none() && scatter.is_none() && summary.is_none() && pareto.is_none() {
        return Err(AuditError::Config("nothing to report: pass --heatmap, --scatter, --summary or --pareto".into()));
    }
    ensure_dir(out)?;
    let mut written = Vec::new();
    for input in inputs {
        let rs = ResultSet::load(input)?;
        let stem = file_safe(&rs.protocol);
        if let Some(m) = heatmap {
            let doc = emit_heatmap(&rs, m, subgroup)?;
            let base = format!("heatmap_{stem}_{}_{}", m.as_str(), file_safe(subgroup));
            write_json(out.join(format!("{base}.json")), &doc)?;
            write_text(out.join(format!("{base}.csv")), &heatmap_csv(&doc)?)?;
            written.push(base);
        }
        if let Some([x, y]) = scatter {
            let doc = emit_scatter_with(&rs, *x, *y, None, permutations)?;
            let base = format!("scatter_{stem}_{}_{}", x.as_str(), y.as_str());
            write_json(out.join(format!("{base}.json")), &doc)?;
            write_text(out.join(format!("{base}.csv")), &scatter_csv(&doc)?)?;
            written.push(base);
        }
        if let Some(SummaryKind::Bmw) = summary {
            let doc = summarize_bmw(&rs)?;
            let base = format!("bmw_{stem}");
            write_json(out.join(format!("{base}.json")), &doc)?;
            write_text(out.join(format!("{base}.csv")), &bmw_csv(&doc)?)?;
            written.push(base);
        }
        if let Some(a) = pareto {
            let doc = emit_pareto(&rs, a)?;
            let base = format!("pareto_{stem}_{}", file_safe(a));
            write_json(out.join(format!("{base}.json")), &doc)?;
            written.push(base);
        }
    }
    for w in written {
        println!("wrote {}.json", out.join(w).display());
    }
    Ok(())
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Ingest(c) => cmd_ingest(&c, false),
        Command::Synth(c) => cmd_ingest(&c, true),
        Command::Run { common, protocols } => cmd_run(&common, protocols.as_deref()),
        Command::Select {
            common,
            criterion,
            target,
            subgroup,
        } => cmd_select(&common, criterion, target.as_deref(), subgroup.as_deref()),
        Command::Report {
            inputs,
            out,
            heatmap,
            subgroup,
            scatter,
            summary,
            pareto,
            permutations,
        } => cmd_report(&inputs, &out, heatmap, &subgroup, scatter.as_deref(), summary, pareto.as_deref(), permutations),
    }
}

/// Parses `args` (program name first), runs the command and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(j) = cli.jobs {
        pool = pool.num_threads(usize::from(j));
    }
    let pool = match pool.build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: cannot start worker threads: {e}");
            return EXIT_DATA;
        }
    };
    match pool.install(|| dispatch(cli)) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_DATA
        }
    }
}
