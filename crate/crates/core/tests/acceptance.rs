//! Acceptance gate: one PASS/FAIL line per criterion.
//!
//! Runs without the libtest harness so the summary lines always print.
//! `cargo test --test acceptance -- <filter>` runs the criteria whose name
//! contains `<filter>`.

use std::collections::BTreeMap;
use std::panic::{self, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use subgroup_audit::calibration::{calibrate_classifier, fit_isotonic, fit_isotonic_values};
use subgroup_audit::cli::RunConfig;
use subgroup_audit::data::{delta_ratio, subgroup_ratio, DataSet, LabeledSample, SourceRegistry};
use subgroup_audit::metrics::{mean_discrepancy, subgroup_accuracy, subgroup_auc};
use subgroup_audit::model::{BinaryClassifier, LogisticModel, LogisticObjective};
use subgroup_audit::protocols::{pareto_indices, run_calibration_comparison, run_whole_source_grid};
use subgroup_audit::reporting::{emit_scatter, MetricTag, ResultSet};
use subgroup_audit::similarity::similarity_score;
use subgroup_audit::synth::{generate_source, SourceSpec, SubgroupSpec, SyntheticSpec};

type Outcome = Result<String, String>;

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn manifest_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
}

fn grid_config_path() -> PathBuf {
    manifest_dir().join("configs").join("acceptance_grid.json")
}

/// Scores are the first feature.
struct FirstFeature(f64);

impl BinaryClassifier for FirstFeature {
    fn score(&self, x: &[f64]) -> subgroup_audit::Result<f64> {
        Ok(x[0])
    }
    fn threshold(&self) -> f64 {
        self.0
    }
}

fn scored_set(scores: &[f64], labels: &[u8], groups: &[&str]) -> DataSet {
    let samples = scores
        .iter()
        .zip(labels)
        .zip(groups)
        .map(|((s, y), g)| LabeledSample::new(vec![*s], *y, *g, "src").unwrap())
        .collect();
    DataSet::new(samples, 1).unwrap()
}

// ---------------------------------------------------------------------------

fn bound_suite() -> Outcome {
    let mut r = rng(1);
    let mut worst_gap = f64::INFINITY;
    let triples = 1500;
    for i in 0..triples {
        let d = r.random_range(1..=4);
        let n = r.random_range(1..=150);
        let groups = ["a", "b", "c"];
        let samples: Vec<LabeledSample> = (0..n)
            .map(|_| {
                let x: Vec<f64> = (0..d).map(|_| r.random_range(-3.0..3.0)).collect();
                LabeledSample::new(x, r.random_range(0..=1), groups[r.random_range(0..3)], "s").unwrap()
            })
            .collect();
        let data = DataSet::new(samples, d).unwrap();
        let t = r.random_range(0.05..0.95);
        let model = LogisticModel::from_parts(
            (0..d).map(|_| r.random_range(-4.0..4.0)).collect(),
            r.random_range(-2.0..2.0),
            vec![0.0; d],
            vec![1.0; d],
            t,
        )
        .unwrap();
        let slices = data.subgroups();
        let a = &slices[r.random_range(0..slices.len())];
        let acc = subgroup_accuracy(&model, &data, a).unwrap();
        let disc = mean_discrepancy(&model, &data.subgroup_subset(a)).unwrap();
        let gap = (1.0 - acc) - disc;
        check(gap >= -1e-12, || format!("triple {i}: disc {disc} > 1 - acc {}", 1.0 - acc))?;
        worst_gap = worst_gap.min(gap);
    }
    Ok(format!("{triples} triples, min (1 - acc) - disc = {worst_gap:.3e}"))
}

fn brute_auc(scores: &[f64], labels: &[u8]) -> Option<f64> {
    let (mut wins, mut pairs) = (0u64, 0u64);
    for (i, &yi) in labels.iter().enumerate() {
        for (j, &yj) in labels.iter().enumerate() {
            if yi == 1 && yj == 0 {
                pairs += 1;
                if scores[i] > scores[j] {
                    wins += 1;
                }
            }
        }
    }
    (pairs > 0).then(|| wins as f64 / pairs as f64)
}

fn auc_oracle() -> Outcome {
    let mut r = rng(2);
    let mut single_class = 0;
    for inst in 0..200 {
        let n = r.random_range(1..=200);
        let levels = r.random_range(2..=50);
        let p_pos = [0.0, 0.05, 0.3, 0.5, 0.9, 1.0][inst % 6];
        let scores: Vec<f64> = (0..n).map(|_| r.random_range(0..levels) as f64 / levels as f64).collect();
        let labels: Vec<u8> = (0..n).map(|_| u8::from(r.random::<f64>() < p_pos)).collect();
        let groups: Vec<&str> = (0..n).map(|i| if i % 3 == 0 { "b" } else { "a" }).collect();
        let data = scored_set(&scores, &labels, &groups);
        for a in data.subgroups() {
            let idx: Vec<usize> = (0..n).filter(|&i| groups[i] == a).collect();
            let s: Vec<f64> = idx.iter().map(|&i| scores[i]).collect();
            let y: Vec<u8> = idx.iter().map(|&i| labels[i]).collect();
            let expect = brute_auc(&s, &y);
            if expect.is_none() {
                single_class += 1;
            }
            let got = subgroup_auc(&FirstFeature(0.5), &data, &a).unwrap();
            check(got == expect, || format!("instance {inst} slice {a}: {got:?} vs brute force {expect:?}"))?;
        }
    }
    Ok(format!("200 instances exact, {single_class} single-class slices empty"))
}

/// Least squares over non-decreasing sequences on the 0.01 grid.
fn grid_isotonic(y: &[f64]) -> Vec<f64> {
    const G: usize = 101;
    let n = y.len();
    let grid = |k: usize| k as f64 / 100.0;
    // cost[i][k]: best cost of y[..=i] with value k at i; back[i][k]: argmin level at i-1
    let mut cost = vec![[0.0f64; G]; n];
    let mut back = vec![[0usize; G]; n];
    for k in 0..G {
        cost[0][k] = (y[0] - grid(k)).powi(2);
    }
    for i in 1..n {
        let (mut best, mut arg) = (f64::INFINITY, 0);
        for k in 0..G {
            if cost[i - 1][k] < best {
                best = cost[i - 1][k];
                arg = k;
            }
            cost[i][k] = best + (y[i] - grid(k)).powi(2);
            back[i][k] = arg;
        }
    }
    let mut k = (0..G).min_by(|&a, &b| cost[n - 1][a].total_cmp(&cost[n - 1][b])).unwrap();
    let mut out = vec![0.0; n];
    for i in (0..n).rev() {
        out[i] = grid(k);
        k = back[i][k];
    }
    out
}

fn pava_oracle() -> Outcome {
    let mut patterns = 0;
    let mut max_err: f64 = 0.0;
    for n in 1..=8usize {
        let scores: Vec<f64> = (0..n).map(|i| i as f64 / n as f64).collect();
        for mask in 0..(1u32 << n) {
            let labels: Vec<u8> = (0..n).map(|i| ((mask >> i) & 1) as u8).collect();
            let m = fit_isotonic(&scores, &labels).unwrap();
            let fitted: Vec<f64> = scores.iter().map(|s| m.apply(*s)).collect();
            let y: Vec<f64> = labels.iter().map(|&v| f64::from(v)).collect();
            let oracle = grid_isotonic(&y);
            for (a, b) in fitted.iter().zip(&oracle) {
                max_err = max_err.max((a - b).abs());
            }
            check(max_err <= 1e-2, || format!("labels {labels:?}: {fitted:?} vs grid {oracle:?}"))?;
            patterns += 1;
        }
    }
    let mut r = rng(3);
    for inst in 0..1000 {
        let n = r.random_range(1..=60);
        let levels = r.random_range(1..=30);
        let scores: Vec<f64> = (0..n).map(|_| r.random_range(0..levels) as f64 / levels as f64).collect();
        let labels: Vec<u8> = (0..n).map(|_| r.random_range(0..=1)).collect();
        let m = fit_isotonic(&scores, &labels).unwrap();
        let fitted: Vec<f64> = scores.iter().map(|s| m.apply(*s)).collect();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
        for w in order.windows(2) {
            check(fitted[w[0]] <= fitted[w[1]], || format!("instance {inst}: not monotone"))?;
        }
        let mean_fit = fitted.iter().sum::<f64>() / n as f64;
        let mean_y = labels.iter().map(|&v| f64::from(v)).sum::<f64>() / n as f64;
        check((mean_fit - mean_y).abs() <= 1e-9, || format!("instance {inst}: mean {mean_fit} vs {mean_y}"))?;
        let again = fit_isotonic_values(&scores, &fitted, None).unwrap();
        for (s, f) in scores.iter().zip(&fitted) {
            check((again.apply(*s) - f).abs() <= 1e-12, || format!("instance {inst}: refit moved a value"))?;
        }
    }
    Ok(format!("{patterns} label patterns (max grid gap {max_err:.4}), 1000 random instances"))
}

fn gradient_check() -> Outcome {
    let mut r = rng(4);
    let mut worst: f64 = 0.0;
    for ds in 0..20 {
        let d = r.random_range(1..=6);
        let n = r.random_range(5..=80);
        let z: Vec<f64> = (0..n * d).map(|_| r.random_range(-2.0..2.0)).collect();
        let y: Vec<f64> = (0..n).map(|_| f64::from(r.random_range(0..=1u8))).collect();
        let weights: Vec<f64> = (0..n).map(|_| r.random_range(0.1..2.0)).collect();
        let l2 = [0.0, 1e-2, 0.5][ds % 3];
        let obj = LogisticObjective::new(z, y, (ds % 2 == 0).then_some(weights.as_slice()), d, l2).unwrap();
        for _ in 0..10 {
            let p: Vec<f64> = (0..obj.n_params()).map(|_| r.random_range(-2.0..2.0)).collect();
            let g = obj.gradient(&p);
            let h = 1e-5;
            let fd: Vec<f64> = (0..p.len())
                .map(|j| {
                    let (mut up, mut dn) = (p.clone(), p.clone());
                    up[j] += h;
                    dn[j] -= h;
                    (obj.value(&up) - obj.value(&dn)) / (2.0 * h)
                })
                .collect();
            let diff: f64 = g.iter().zip(&fd).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            let scale = g.iter().map(|v| v * v).sum::<f64>().sqrt().max(fd.iter().map(|v| v * v).sum::<f64>().sqrt()).max(1e-12);
            let rel = diff / scale;
            worst = worst.max(rel);
            check(rel <= 1e-5, || format!("dataset {ds}: relative error {rel:.3e}"))?;
        }
    }
    Ok(format!("200 points, max relative error {worst:.3e}"))
}

/// Hospital, per-subgroup counts (Asian, Black, Other, White) and printed rates.
const TABLE2: [(&str, [usize; 4], [f64; 4]); 12] = [
    ("73", [61, 622, 347, 3221], [0.01, 0.15, 0.08, 0.76]),
    ("167", [29, 154, 421, 1503], [0.01, 0.07, 0.20, 0.71]),
    ("188", [29, 517, 64, 1689], [0.01, 0.22, 0.03, 0.73]),
    ("199", [3, 42, 48, 2434], [0.001, 0.02, 0.02, 0.96]),
    ("243", [24, 873, 83, 1831], [0.009, 0.31, 0.03, 0.65]),
    ("252", [7, 152, 50, 1993], [0.003, 0.07, 0.02, 0.91]),
    ("264", [31, 263, 64, 3299], [0.009, 0.07, 0.02, 0.90]),
    ("300", [19, 267, 84, 2000], [0.008, 0.11, 0.04, 0.84]),
    ("338", [5, 41, 143, 2568], [0.002, 0.01, 0.05, 0.93]),
    ("420", [52, 157, 276, 2940], [0.02, 0.05, 0.08, 0.86]),
    ("443", [12, 1352, 83, 1119], [0.005, 0.53, 0.03, 0.44]),
    ("458", [34, 747, 132, 1542], [0.01, 0.30, 0.05, 0.63]),
];
const GROUPS: [&str; 4] = ["Asian", "Black", "Other", "White"];

fn counts_set(counts: &[(&str, usize)]) -> DataSet {
    let mut v = Vec::new();
    for (g, n) in counts {
        for i in 0..*n {
            v.push(LabeledSample::new(vec![0.0], (i % 2) as u8, *g, "src").unwrap());
        }
    }
    DataSet::new(v, 1).unwrap()
}

fn ratio_arithmetic() -> Outcome {
    // Rates are checked against the four tabulated subgroups, whose counts
    // sum to slightly less than the hospital total.
    let mut registry = SourceRegistry::new();
    for (h, counts, _) in TABLE2 {
        let c: Vec<(&str, usize)> = GROUPS.iter().copied().zip(counts).collect();
        registry.insert(h, counts_set(&c)).unwrap();
    }
    let mut worst: f64 = 0.0;
    for (h, _, printed) in TABLE2 {
        let d = registry.get(h).unwrap();
        for (g, p) in GROUPS.iter().zip(printed) {
            let v = subgroup_ratio(d, g).unwrap();
            worst = worst.max((v - p).abs());
            check((v - p).abs() <= 0.005, || format!("hospital {h} {g}: {v:.4} vs printed {p}"))?;
        }
    }
    let train = counts_set(&[("Black", 22), ("Rest", 978)]);
    let added = counts_set(&[("Black", 99), ("Rest", 901)]);
    let dr = delta_ratio(&train, &added, "Black").unwrap();
    // exact value 0.0385 lies on the tolerance edge; allow float rounding only
    check((dr - 0.038).abs() <= 5e-4 + 1e-12, || format!("delta ratio {dr}"))?;
    Ok(format!("48 rates (max gap {worst:.4}), delta ratio {dr:.4}"))
}

fn two_group_spec(shift: f64) -> SyntheticSpec {
    let g = |name: &str, weight: f64, off: f64| SubgroupSpec {
        name: name.into(),
        weight,
        base_rate: 0.4,
        mean_0: vec![off, 0.0],
        mean_1: vec![off + 1.0, 1.0],
        scale: 1.0,
    };
    SyntheticSpec {
        feature_dim: 2,
        seed: 77,
        sources: vec![
            SourceSpec {
                name: "P".into(),
                subgroups: vec![g("W", 0.6, 0.0), g("B", 0.4, 0.0)],
            },
            SourceSpec {
                name: "Q".into(),
                subgroups: vec![g("W", 0.6, 0.0), g("B", 0.4, 0.0)],
            },
            SourceSpec {
                name: "Far".into(),
                subgroups: vec![g("W", 0.6, shift), g("B", 0.4, shift)],
            },
        ],
    }
}

fn similarity_null_alt() -> Outcome {
    let spec = two_group_spec(4.0);
    let p = generate_source(&spec, "P", 2000).unwrap();
    let q = generate_source(&spec, "Q", 2000).unwrap();
    let far = generate_source(&spec, "Far", 2000).unwrap();
    let null = similarity_score(&p, &q, 11).unwrap();
    let alt = similarity_score(&p, &far, 11).unwrap();
    check((0.45..=0.55).contains(&null), || format!("P = Q score {null}"))?;
    check(alt >= 0.9, || format!("4 sigma score {alt}"))?;
    Ok(format!("P = Q score {null:.4}, 4 sigma score {alt:.4}"))
}

fn grid_result_set() -> (RunConfig, SourceRegistry, ResultSet) {
    let cfg = RunConfig::load(&grid_config_path()).unwrap();
    let registry = cfg.load_registry().unwrap();
    let records = run_whole_source_grid(cfg.targets.as_deref(), &registry, &cfg.experiment, &cfg.trainer()).unwrap();
    let rs = ResultSet::new("whole_source", cfg.experiment.clone(), records, 0).unwrap();
    (cfg, registry, rs)
}

/// Subgroups making up less than half of the pooled registry.
fn minorities(r: &SourceRegistry) -> Vec<String> {
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    let mut total = 0;
    for (_, d) in r.iter() {
        total += d.len();
        for (g, c) in d.subgroup_counts() {
            *counts.entry(g).or_default() += c;
        }
    }
    counts.into_iter().filter(|(_, c)| 2 * c < total).map(|(g, _)| g).collect()
}

fn grid_criteria() -> (Outcome, Outcome) {
    let (cfg, registry, rs) = grid_result_set();
    let shape = format!(
        "{} targets x {} sources x {} folds",
        cfg.targets.as_ref().map_or(registry.len(), Vec::len),
        registry.len(),
        cfg.experiment.k_folds
    );

    let minor = minorities(&registry);
    let doc = emit_scatter(&rs, MetricTag::DeltaDisc, MetricTag::DeltaAccuracy, Some(&minor)).unwrap();
    let corr = (|| {
        let mut parts = Vec::new();
        for g in &doc.groups {
            let c = g.correlation.ok_or_else(|| format!("{}: r undefined", g.subgroup))?;
            parts.push(format!("{} r={:.3} p={:.4} (n={})", g.subgroup, c.r, c.p, c.n));
            check(c.r <= -0.5 && c.p < 0.01, || format!("{}: r={:.3} p={:.4}", g.subgroup, c.r, c.p))?;
        }
        Ok(format!("{shape}; {}", parts.join(", ")))
    })();

    let mut help = None;
    let mut hurt = None;
    for r in &rs.records {
        let overall = r.overall.delta_accuracy.mean;
        if overall < 0.0 {
            continue;
        }
        for (g, s) in &r.subgroups {
            let d = s.delta_accuracy.mean;
            let tag = format!("{} {} {:+.4} (overall {:+.4})", r.key(), g, d, overall);
            if d >= 0.02 && help.is_none() {
                help = Some(tag);
            } else if d <= -0.02 && hurt.is_none() {
                hurt = Some(tag);
            }
        }
    }
    let both = match (help, hurt) {
        (Some(a), Some(b)) => Ok(format!("help: {a}; hurt: {b}")),
        (a, b) => Err(format!("help {a:?}, hurt {b:?}")),
    };
    (corr, both)
}

fn calibration_projection() -> Outcome {
    let mut r = rng(5);
    let mut worst: f64 = 0.0;
    for run in 0..100 {
        let n = r.random_range(2..=300);
        let scores: Vec<f64> = (0..n).map(|_| (r.random_range(0..40) as f64) / 40.0).collect();
        let labels: Vec<u8> = (0..n).map(|_| r.random_range(0..=1)).collect();
        let v = scored_set(&scores, &labels, &vec!["a"; n]);
        let c = calibrate_classifier(FirstFeature(0.5), &v).unwrap();
        let mean = c.score_all(&v).unwrap().iter().sum::<f64>() / n as f64;
        let target = labels.iter().map(|&y| f64::from(y)).sum::<f64>() / n as f64;
        worst = worst.max((mean - target).abs());
        check((mean - target).abs() <= 1e-9, || format!("run {run}: {mean} vs {target}"))?;
    }

    let cfg = RunConfig::load(&grid_config_path()).unwrap();
    let registry = cfg.load_registry().unwrap();
    let target = cfg.targets.as_ref().map_or("H1", |t| t[0].as_str()).to_string();
    let cmp = run_calibration_comparison(&target, &registry, &cfg.experiment, &cfg.trainer()).unwrap();
    let mut cells = 0;
    for table in cmp.summary.per_target.iter().chain([&cmp.summary.average]) {
        check(table.rows.len() == 3, || "expected Best/Median/Worst rows".into())?;
        let ranks: Vec<&str> = table.rows.iter().map(|r| r.rank.as_str()).collect();
        check(ranks == ["best", "median", "worst"], || format!("rows {ranks:?}"))?;
        for col in &cmp.summary.columns {
            let v: Vec<_> = table.rows.iter().map(|r| &r.cells[col]).collect();
            for (name, get) in [("w/o cal", 0), ("with cal", 1)] {
                let x: Vec<f64> = v.iter().map(|c| if get == 0 { c.without_cal.mean } else { c.with_cal.mean }).collect();
                check(x[0] >= x[1] && x[1] >= x[2], || format!("{col} {name}: {x:?}"))?;
                cells += 1;
            }
        }
    }
    Ok(format!("100 runs (max gap {worst:.2e}); {cells} columns ordered Best >= Median >= Worst for target {target}"))
}

fn run_cli(args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_subaudit")).args(args).output().map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!("subaudit {}: {}", args.join(" "), String::from_utf8_lossy(&out.stderr)))
    }
}

fn pipeline(dir: &Path, jobs: &str) -> Result<BTreeMap<String, Vec<u8>>, String> {
    let cfg = grid_config_path();
    let cfg = cfg.to_str().unwrap();
    let out = dir.to_str().unwrap();
    let rep = dir.join("report");
    let rep = rep.to_str().unwrap();
    run_cli(&["--jobs", jobs, "ingest", "--config", cfg, "--out", out])?;
    run_cli(&["--jobs", jobs, "run", "--config", cfg, "--out", out])?;
    let ws = dir.join("resultset_whole_source.json");
    let ws = ws.to_str().unwrap();
    let cal = dir.join("resultset_calibration.json");
    let cal = cal.to_str().unwrap();
    run_cli(&["report", "--input", ws, "--out", rep, "--heatmap", "accuracy", "--subgroup", "overall"])?;
    run_cli(&["report", "--input", ws, "--out", rep, "--scatter", "delta_disc", "delta_accuracy", "--pareto", "B"])?;
    run_cli(&["report", "--input", cal, "--out", rep, "--summary", "bmw"])?;
    let mut files = BTreeMap::new();
    for sub in [dir.to_path_buf(), dir.join("report")] {
        for e in std::fs::read_dir(&sub).map_err(|e| e.to_string())? {
            let p = e.map_err(|e| e.to_string())?.path();
            if p.is_file() {
                let bytes = std::fs::read(&p).map_err(|e| e.to_string())?;
                let rel = p.strip_prefix(dir).unwrap().display().to_string();
                files.insert(rel, strip_timestamp(&bytes));
            }
        }
    }
    Ok(files)
}

/// Drops the line carrying the run timestamp.
fn strip_timestamp(bytes: &[u8]) -> Vec<u8> {
    let text = String::from_utf8_lossy(bytes);
    text.lines().filter(|l| !l.contains("\"timestamp_unix\"")).collect::<Vec<_>>().join("\n").into_bytes()
}

fn determinism() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let a = pipeline(&tmp.path().join("a"), "1")?;
    let b = pipeline(&tmp.path().join("b"), "1")?;
    let c = pipeline(&tmp.path().join("c"), "8")?;
    check(a.len() >= 12, || format!("only {} artifacts", a.len()))?;
    for (other, label) in [(&b, "repeat"), (&c, "--jobs 8")] {
        check(a.keys().eq(other.keys()), || format!("{label}: artifact sets differ"))?;
        for (k, v) in &a {
            check(other[k] == *v, || format!("{label}: {k} differs"))?;
        }
    }
    Ok(format!("{} artifacts byte-identical across repeat and --jobs 1 vs 8", a.len()))
}

fn pareto_oracle() -> Outcome {
    let mut r = rng(6);
    for set in 0..100 {
        // coarse coordinates so ties and duplicates occur
        let pts: Vec<(f64, f64)> =
            (0..100).map(|_| (r.random_range(-20..20) as f64 / 10.0, r.random_range(-20..20) as f64 / 10.0)).collect();
        let brute: Vec<usize> = (0..pts.len())
            .filter(|&i| {
                !pts.iter().any(|q| q.0 >= pts[i].0 && q.1 >= pts[i].1 && (q.0 > pts[i].0 || q.1 > pts[i].1))
            })
            .collect();
        let got = pareto_indices(&pts);
        check(got == brute, || format!("set {set}: {got:?} vs {brute:?}"))?;
    }
    Ok("100 sets of 100 points match the O(n^2) filter".into())
}

// ---------------------------------------------------------------------------

fn timed<F: FnOnce() -> Outcome>(f: F) -> (Outcome, Duration) {
    let start = Instant::now();
    let res = panic::catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
        let msg = e
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_else(|| "panic".into());
        Err(format!("panicked: {msg}"))
    });
    (res, start.elapsed())
}

fn main() {
    let filter: Option<String> = std::env::args().skip(1).find(|a| !a.starts_with('-'));
    let wanted = |name: &str| filter.as_deref().is_none_or(|f| name.contains(f));
    let mut results: Vec<(&str, Duration, Duration, Outcome)> = Vec::new();
    let single = |results: &mut Vec<_>, name: &'static str, limit: u64, f: fn() -> Outcome| {
        if wanted(name) {
            let (r, t) = timed(f);
            results.push((name, t, Duration::from_secs(limit), r));
        }
    };
    single(&mut results, "bound_suite", 10, bound_suite);
    single(&mut results, "auc_oracle", 10, auc_oracle);
    single(&mut results, "pava_oracle", 30, pava_oracle);
    single(&mut results, "gradient_check", 5, gradient_check);
    single(&mut results, "ratio_arithmetic", 1, ratio_arithmetic);
    single(&mut results, "similarity_null_alternative", 30, similarity_null_alt);
    if wanted("mean_discrepancy_correlation") || wanted("help_and_hurt") {
        let (both, t) = timed(|| {
            let (a, b) = grid_criteria();
            Ok(format!("{}\u{0}{}", encode(a), encode(b)))
        });
        let (a, b) = match both {
            Ok(s) => {
                let (x, y) = s.split_once('\u{0}').unwrap();
                (decode(x), decode(y))
            }
            Err(e) => (Err(e.clone()), Err(e)),
        };
        // both criteria share one grid run and its five-minute budget
        results.push(("mean_discrepancy_correlation", t, Duration::from_secs(300), a));
        results.push(("help_and_hurt", t, Duration::from_secs(300), b));
    }
    single(&mut results, "calibration_projection", 60, calibration_projection);
    single(&mut results, "determinism", 600, determinism);
    single(&mut results, "pareto_oracle", 10, pareto_oracle);

    let mut failed = 0;
    for (name, took, limit, res) in &results {
        let over = took > limit;
        let ok = res.is_ok() && !over;
        if !ok {
            failed += 1;
        }
        let detail = match res {
            Ok(s) => s.clone(),
            Err(e) => e.clone(),
        };
        let budget = if over { format!(" OVER BUDGET ({}s)", limit.as_secs()) } else { String::new() };
        println!("{} {name} [{:.2}s]{budget}: {detail}", if ok { "PASS" } else { "FAIL" }, took.as_secs_f64());
    }
    println!("acceptance: {} passed, {failed} failed", results.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}

fn encode(o: Outcome) -> String {
    match o {
        Ok(s) => format!("+{s}"),
        Err(s) => format!("-{s}"),
    }
}

fn decode(s: &str) -> Outcome {
    match s.split_at(1) {
        ("+", rest) => Ok(rest.to_string()),
        (_, rest) => Err(rest.to_string()),
    }
}
