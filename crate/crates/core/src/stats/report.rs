//! Loading result logs, aggregating them per method and rendering reports.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{delta_percent, mean, percentile, sample_sd, tier_ranks, time_overhead, to_unified_score, welch_wtl, Outcome};
use crate::data::Metric;
use crate::error::{Error, Result};
use crate::train::{read_jsonl, RunResult, Timing};
use crate::tune::TrialRecord;

pub const REPORT_SCHEMA_VERSION: u32 = 1;
pub const PERCENTILES: [f64; 5] = [10.0, 25.0, 50.0, 75.0, 90.0];
pub const PERCENTILE_METHOD: &str = "linear";

/// `model:optimizer`.
pub fn method_id(model: &str, optimizer: &str) -> String {
    format!("{model}:{optimizer}")
}

/// Everything read from an output tree.
#[derive(Debug, Clone, Default)]
pub struct LoadedResults {
    pub runs: Vec<RunResult>,
    /// Total tuning wall time per (dataset, method).
    pub tuning_seconds: BTreeMap<(String, String), f64>,
    /// Total training wall time per (dataset, method).
    pub training_seconds: BTreeMap<(String, String), f64>,
}

fn collect_files(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.is_dir() {
            collect_files(&path, out)?;
        } else {
            out.push(path);
        }
    }
    Ok(())
}

fn tuning_key(path: &Path) -> Option<(String, String)> {
    let method_dir = path.parent()?;
    let (model, optimizer) = method_dir.file_name()?.to_str()?.split_once("__")?;
    let dataset = method_dir.parent()?.file_name()?.to_str()?;
    Some((dataset.to_string(), method_id(model, optimizer)))
}

/// Read every `runs.jsonl`, `timings.jsonl` and `tuning.jsonl` under `root`.
/// Tuning logs are attributed through their `<dataset>/<model>__<optimizer>/`
/// location.
pub fn load_results(root: &Path) -> Result<LoadedResults> {
    if !root.exists() {
        return Err(Error::MissingFile(root.to_path_buf()));
    }
    let mut files = Vec::new();
    if root.is_dir() {
        collect_files(root, &mut files)?;
    } else {
        files.push(root.to_path_buf());
    }
    files.sort();
    let mut out = LoadedResults::default();
    for path in files {
        match path.file_name().and_then(|n| n.to_str()) {
            Some("runs.jsonl") => out.runs.extend(read_jsonl::<RunResult>(&path)?),
            Some("timings.jsonl") => {
                for t in read_jsonl::<Timing>(&path)? {
                    *out.training_seconds
                        .entry((t.dataset, method_id(&t.model, &t.optimizer)))
                        .or_default() += t.wall_time_seconds;
                }
            }
            Some("tuning.jsonl") => {
                if let Some(key) = tuning_key(&path) {
                    let total: f64 = read_jsonl::<TrialRecord>(&path)?.iter().map(|t| t.wall_time_seconds).sum();
                    *out.tuning_seconds.entry(key).or_default() += total;
                }
            }
            _ => {}
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateOptions {
    pub baseline: String,
    pub alpha: f64,
    pub min_seeds: usize,
}

impl Default for AggregateOptions {
    fn default() -> Self {
        Self {
            baseline: "mlp:adamw".into(),
            alpha: 0.05,
            min_seeds: 10,
        }
    }
}

/// Seed-level test scores of one method on one dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetScores {
    pub metric: Metric,
    pub seeds: Vec<u64>,
    /// Metric as reported.
    pub raw: Vec<f64>,
    /// Higher-is-better unified score.
    pub scores: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MethodScores {
    pub method: String,
    pub datasets: BTreeMap<String, DatasetScores>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: String,
    pub datasets_compared: usize,
    pub delta_score: Option<f64>,
    pub mean_rank: Option<f64>,
    pub wins: usize,
    pub ties: usize,
    pub losses: usize,
    pub time_overhead: Option<f64>,
    pub deltas: Vec<f64>,
    pub ranks: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetRow {
    pub dataset: String,
    pub method: String,
    pub metric: Metric,
    pub n_seeds: usize,
    pub metric_mean: f64,
    pub metric_std: f64,
    pub score_mean: f64,
    pub score_std: f64,
    pub delta: Option<f64>,
    pub rank: usize,
    pub outcome: Outcome,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateReport {
    pub schema_version: u32,
    pub baseline: String,
    pub alpha: f64,
    pub min_seeds: usize,
    pub percentile_method: String,
    /// `tuning` or `training`, whichever wall times were available.
    pub time_source: Option<String>,
    pub datasets: Vec<String>,
    pub methods: Vec<MethodSummary>,
    pub rows: Vec<DatasetRow>,
    pub warnings: Vec<String>,
}

/// Group successful runs into per-method score tables. Duplicate seeds keep
/// the first record.
pub fn method_scores(runs: &[RunResult], warnings: &mut Vec<String>) -> BTreeMap<String, MethodScores> {
    let mut grouped: BTreeMap<String, BTreeMap<String, BTreeMap<u64, &RunResult>>> = BTreeMap::new();
    for r in runs.iter().filter(|r| r.is_ok() && r.test_score_at_best.is_some()) {
        let seeds = grouped
            .entry(method_id(&r.model, &r.optimizer))
            .or_default()
            .entry(r.dataset.clone())
            .or_default();
        if seeds.contains_key(&r.seed) {
            warnings.push(format!(
                "duplicate run for {} on {} seed {}; keeping the first",
                method_id(&r.model, &r.optimizer),
                r.dataset,
                r.seed
            ));
            continue;
        }
        seeds.insert(r.seed, r);
    }
    let mut out = BTreeMap::new();
    for (method, per_dataset) in grouped {
        let mut datasets = BTreeMap::new();
        'ds: for (dataset, seeds) in per_dataset {
            let first = seeds.values().next().expect("non-empty group");
            let metric = first.metric;
            let mut ds = DatasetScores {
                metric,
                seeds: Vec::new(),
                raw: Vec::new(),
                scores: Vec::new(),
            };
            for (&seed, r) in &seeds {
                if r.metric != metric {
                    warnings.push(format!("{method} on {dataset}: mixed metrics; dataset skipped"));
                    continue 'ds;
                }
                let v = r.test_score_at_best.expect("filtered above");
                match to_unified_score(metric, v, r.test_label_std) {
                    Ok(s) => {
                        ds.seeds.push(seed);
                        ds.raw.push(v);
                        ds.scores.push(s);
                    }
                    Err(e) => {
                        warnings.push(format!("{method} on {dataset} seed {seed}: {e}"));
                    }
                }
            }
            datasets.insert(dataset, ds);
        }
        out.insert(method.clone(), MethodScores { method, datasets });
    }
    out
}

/// Aggregate loaded results against the baseline method.
pub fn aggregate(results: &LoadedResults, opts: &AggregateOptions) -> Result<AggregateReport> {
    if opts.min_seeds < 2 {
        return Err(Error::Config("min_seeds must be at least 2".into()));
    }
    let mut warnings = Vec::new();
    let table = method_scores(&results.runs, &mut warnings);
    let base = table
        .get(&opts.baseline)
        .ok_or_else(|| Error::Undefined(format!("baseline method {} not found in results", opts.baseline)))?;

    let eligible = |m: &MethodScores, d: &str| m.datasets.get(d).is_some_and(|s| s.scores.len() >= opts.min_seeds);
    let datasets: Vec<String> = base.datasets.keys().filter(|d| eligible(base, d)).cloned().collect();
    if datasets.is_empty() {
        return Err(Error::Undefined(format!(
            "baseline {} has no dataset with {} completed seeds",
            opts.baseline, opts.min_seeds
        )));
    }

    let mut order: Vec<&MethodScores> = vec![base];
    order.extend(table.values().filter(|m| m.method != opts.baseline));

    for m in &order {
        for (d, s) in &m.datasets {
            if s.scores.len() < opts.min_seeds {
                warnings.push(format!(
                    "{} on {d}: {} of {} seeds completed; excluded",
                    m.method,
                    s.scores.len(),
                    opts.min_seeds
                ));
            } else if !datasets.contains(d) {
                warnings.push(format!("{} on {d}: baseline missing; excluded", m.method));
            }
        }
    }

    let mut rows = Vec::new();
    let mut ranks: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    let mut deltas: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    let mut wtl: BTreeMap<&str, [usize; 3]> = BTreeMap::new();
    for d in &datasets {
        let present: Vec<&MethodScores> = order.iter().copied().filter(|m| eligible(m, d)).collect();
        let stats: Vec<(f64, f64)> = present
            .iter()
            .map(|m| {
                let s = &m.datasets[d].scores;
                (mean(s), sample_sd(s))
            })
            .collect();
        let r = tier_ranks(&stats)?;
        let b = &base.datasets[d];
        let b_mean = mean(&b.scores);
        if b_mean <= 0.0 {
            warnings.push(format!("{d}: baseline unified score {b_mean:.4} is not positive; excluded from delta"));
        }
        for (i, m) in present.iter().enumerate() {
            let s = &m.datasets[d];
            let delta = delta_percent(stats[i].0, b_mean);
            let outcome = welch_wtl(&s.scores, &b.scores, opts.alpha)?;
            ranks.entry(&m.method).or_default().push(r[i]);
            if let Some(x) = delta {
                deltas.entry(&m.method).or_default().push(x);
            }
            let counts = wtl.entry(&m.method).or_default();
            counts[match outcome {
                Outcome::Win => 0,
                Outcome::Tie => 1,
                Outcome::Loss => 2,
            }] += 1;
            rows.push(DatasetRow {
                dataset: d.clone(),
                method: m.method.clone(),
                metric: s.metric,
                n_seeds: s.scores.len(),
                metric_mean: mean(&s.raw),
                metric_std: sample_sd(&s.raw),
                score_mean: stats[i].0,
                score_std: stats[i].1,
                delta,
                rank: r[i],
                outcome,
            });
        }
    }

    let (times, time_source) = if !results.tuning_seconds.is_empty() {
        (&results.tuning_seconds, Some("tuning".to_string()))
    } else if !results.training_seconds.is_empty() {
        (&results.training_seconds, Some("training".to_string()))
    } else {
        (&results.tuning_seconds, None)
    };

    let methods = order
        .iter()
        .filter(|m| ranks.contains_key(m.method.as_str()))
        .map(|m| {
            let id = m.method.as_str();
            let r = &ranks[id];
            let d = deltas.get(id).cloned().unwrap_or_default();
            let [wins, ties, losses] = wtl[id];
            let pairs: Vec<(f64, f64)> = datasets
                .iter()
                .filter(|ds| eligible(m, ds))
                .filter_map(|ds| {
                    let mt = times.get(&(ds.clone(), m.method.clone()))?;
                    let bt = times.get(&(ds.clone(), opts.baseline.clone()))?;
                    Some((*mt, *bt))
                })
                .collect();
            MethodSummary {
                method: m.method.clone(),
                datasets_compared: r.len(),
                delta_score: (!d.is_empty()).then(|| mean(&d)),
                mean_rank: Some(r.iter().sum::<usize>() as f64 / r.len() as f64),
                wins,
                ties,
                losses,
                time_overhead: time_overhead(&pairs),
                deltas: d,
                ranks: r.clone(),
            }
        })
        .collect();

    Ok(AggregateReport {
        schema_version: REPORT_SCHEMA_VERSION,
        baseline: opts.baseline.clone(),
        alpha: opts.alpha,
        min_seeds: opts.min_seeds,
        percentile_method: PERCENTILE_METHOD.into(),
        time_source,
        datasets,
        methods,
        rows,
        warnings,
    })
}

fn fmt_opt(v: Option<f64>, digits: usize) -> String {
    v.map_or_else(|| "n/a".into(), |x| format!("{x:.digits$}"))
}

fn metric_name(m: Metric) -> &'static str {
    match m {
        Metric::Accuracy => "accuracy",
        Metric::RocAuc => "roc_auc",
        Metric::Rmse => "rmse",
    }
}

fn outcome_name(o: Outcome) -> &'static str {
    match o {
        Outcome::Win => "win",
        Outcome::Tie => "tie",
        Outcome::Loss => "loss",
    }
}

/// Markdown summary: one row per method, then per-dataset detail.
pub fn render_markdown(r: &AggregateReport) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "# Benchmark report\n");
    let _ = writeln!(
        s,
        "Baseline `{}`, {} dataset(s), at least {} seeds per method and dataset, Welch alpha {}.\n",
        r.baseline,
        r.datasets.len(),
        r.min_seeds,
        r.alpha
    );
    let _ = writeln!(s, "| Method | Delta score (%) | Mean rank | W/T/L | Time overhead | Datasets |");
    let _ = writeln!(s, "|---|---:|---:|:---:|---:|---:|");
    for m in &r.methods {
        let _ = writeln!(
            s,
            "| {} | {} | {} | {}/{}/{} | {} | {} |",
            m.method,
            fmt_opt(m.delta_score, 2),
            fmt_opt(m.mean_rank, 2),
            m.wins,
            m.ties,
            m.losses,
            m.time_overhead.map_or_else(|| "n/a".into(), |x| format!("{x:.2}x")),
            m.datasets_compared
        );
    }
    if let Some(src) = &r.time_source {
        let _ = writeln!(s, "\nTime overhead is the mean per-dataset ratio of {src} wall time to the baseline.");
    }
    let _ = writeln!(s, "\n## Per dataset\n");
    let _ = writeln!(s, "| Dataset | Method | Metric | Seeds | Mean | Std | Score | Delta (%) | Rank | vs baseline |");
    let _ = writeln!(s, "|---|---|---|---:|---:|---:|---:|---:|---:|---|");
    for row in &r.rows {
        let _ = writeln!(
            s,
            "| {} | {} | {} | {} | {:.4} | {:.4} | {:.4} | {} | {} | {} |",
            row.dataset,
            row.method,
            metric_name(row.metric),
            row.n_seeds,
            row.metric_mean,
            row.metric_std,
            row.score_mean,
            fmt_opt(row.delta, 2),
            row.rank,
            outcome_name(row.outcome)
        );
    }
    if !r.warnings.is_empty() {
        let _ = writeln!(s, "\n## Warnings\n");
        for w in &r.warnings {
            let _ = writeln!(s, "- {w}");
        }
    }
    s
}

/// CSV with one line per (dataset, method).
pub fn render_csv(r: &AggregateReport) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "dataset",
        "method",
        "metric",
        "n_seeds",
        "metric_mean",
        "metric_std",
        "score_mean",
        "score_std",
        "delta_percent",
        "rank",
        "outcome",
    ])?;
    for row in &r.rows {
        w.write_record([
            row.dataset.clone(),
            row.method.clone(),
            metric_name(row.metric).to_string(),
            row.n_seeds.to_string(),
            format!("{:.6}", row.metric_mean),
            format!("{:.6}", row.metric_std),
            format!("{:.6}", row.score_mean),
            format!("{:.6}", row.score_std),
            row.delta.map_or_else(String::new, |d| format!("{d:.6}")),
            row.rank.to_string(),
            outcome_name(row.outcome).to_string(),
        ])?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Data(format!("csv flush: {e}")))?;
    String::from_utf8(bytes).map_err(|e| Error::Data(e.to_string()))
}

/// Plot data: per-method rank distribution and delta percentiles.
pub fn plot_data(r: &AggregateReport) -> serde_json::Value {
    let methods: serde_json::Map<String, serde_json::Value> = r
        .methods
        .iter()
        .map(|m| {
            let ranks: Vec<f64> = m.ranks.iter().map(|&x| x as f64).collect();
            let pct = |v: &[f64]| -> Vec<Option<f64>> { PERCENTILES.iter().map(|&q| percentile(v, q)).collect() };
            (
                m.method.clone(),
                serde_json::json!({
                    "ranks": m.ranks,
                    "mean_rank": m.mean_rank,
                    "rank_percentiles": pct(&ranks),
                    "deltas": m.deltas,
                    "delta_score": m.delta_score,
                    "delta_percentiles": pct(&m.deltas),
                }),
            )
        })
        .collect();
    serde_json::json!({
        "schema_version": REPORT_SCHEMA_VERSION,
        "baseline": r.baseline,
        "percentile_method": r.percentile_method,
        "percentiles": PERCENTILES,
        "datasets": r.datasets,
        "methods": methods,
    })
}

pub const REPORT_FILES: [&str; 4] = ["aggregate.json", "report.md", "report.csv", "plotdata.json"];

/// Rendered report files as (file name, contents), in [`REPORT_FILES`] order.
pub fn render_report(r: &AggregateReport) -> Result<Vec<(&'static str, String)>> {
    Ok(vec![
        (REPORT_FILES[0], serde_json::to_string_pretty(r)? + "\n"),
        (REPORT_FILES[1], render_markdown(r)),
        (REPORT_FILES[2], render_csv(r)?),
        (REPORT_FILES[3], serde_json::to_string_pretty(&plot_data(r))? + "\n"),
    ])
}

/// Write every report file into `out_dir`.
pub fn emit_report(r: &AggregateReport, out_dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut written = Vec::new();
    for (name, body) in render_report(r)? {
        let path = out_dir.join(name);
        std::fs::write(&path, body).map_err(|e| Error::io(&path, e))?;
        written.push(path);
    }
    Ok(written)
}
