//! `tabopt`: generate datasets, tune, train, aggregate and report.
//!
//! Exit codes: 0 on success, 1 on invalid input (bad flags, missing files,
//! refusing to overwrite), 2 when work fails after validation.
//!
//! `--config FILE` reads a JSON object whose keys are the command's long
//! flag names (dashes or underscores). Values from the file take precedence
//! over flags given on the command line.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};
use indexmap::IndexMap;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use tabopt_core::data::{load_dataset, make_synthetic_with, write_dataset, EncodedDataset, SyntheticKind, SyntheticOptions};
use tabopt_core::model::ModelKind;
use tabopt_core::nn::Precision;
use tabopt_core::selftest::run_selftest;
use tabopt_core::stats::{aggregate, load_results, render_report, AggregateOptions, AggregateReport, REPORT_FILES};
use tabopt_core::train::{run_protocol, write_jsonl, Timing, TrainConfig};
use tabopt_core::tune::{budget_for, space_for, tune, BestConfig, Dim, LARGE_DATASET_ROWS};

/// Preprocessing seed shared by every command, so tuning and retraining see
/// identical features.
const PREPROCESS_SEED: u64 = 0;
const THREADS_ENV: &str = "TABOPT_THREADS";

#[derive(Debug, Parser)]
#[command(name = "tabopt", version, about = "Optimizer benchmark for tabular MLPs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a synthetic dataset directory.
    GenData(GenDataArgs),
    /// Search model and optimizer hyperparameters.
    Tune(TuneArgs),
    /// Train one configuration over several seeds.
    Train(TrainArgs),
    /// Aggregate run logs into a report.
    Aggregate(AggregateArgs),
    /// Re-render report files from an aggregate.json.
    Report(ReportArgs),
    /// Run the built-in oracle checks.
    Selftest,
}

#[derive(Debug, Args, Serialize, Deserialize)]
struct GenDataArgs {
    /// two_gaussians, linear_regression or friedman.
    #[arg(long)]
    kind: String,
    #[arg(long)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Dataset name written to meta.json; defaults to the kind.
    #[arg(long)]
    name: Option<String>,
    /// Class-mean distance in standard deviations (two_gaussians).
    #[arg(long)]
    separation: Option<f64>,
    /// Label noise standard deviation (regression kinds).
    #[arg(long)]
    noise: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    force: bool,
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize, Deserialize)]
struct TrainingArgs {
    #[arg(long)]
    patience: Option<usize>,
    #[arg(long)]
    max_epochs: Option<usize>,
    /// Overrides the dataset's batch size.
    #[arg(long)]
    batch_size: Option<usize>,
    /// f64 or f32 matrix products.
    #[arg(long)]
    precision: Option<String>,
}

#[derive(Debug, Args, Serialize, Deserialize)]
struct TuneArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    model: String,
    #[arg(long)]
    optimizer: String,
    /// Number of trials; defaults to the model's benchmark budget.
    #[arg(long)]
    budget: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1)]
    workers: usize,
    #[arg(long)]
    out: PathBuf,
    /// Dimension overrides: a JSON object such as
    /// {"model.width": {"type": "int_uniform", ...}}, inline or in a file.
    #[arg(long)]
    space: Option<String>,
    #[arg(long)]
    force: bool,
    #[command(flatten)]
    #[serde(flatten)]
    training: TrainingArgs,
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize, Deserialize)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    model: String,
    #[arg(long)]
    optimizer: String,
    /// Inclusive range `a..b` or a comma list.
    #[arg(long, default_value = "0..9")]
    seeds: String,
    #[arg(long, default_value_t = 1)]
    workers: usize,
    #[arg(long)]
    out: PathBuf,
    /// Tuned configuration; defaults to the one `tune` wrote under --out.
    #[arg(long)]
    best_config: Option<PathBuf>,
    #[arg(long)]
    force: bool,
    #[command(flatten)]
    #[serde(flatten)]
    training: TrainingArgs,
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize, Deserialize)]
struct AggregateArgs {
    /// Directory searched recursively for runs.jsonl, tuning.jsonl and timings.jsonl.
    #[arg(long)]
    runs: PathBuf,
    /// Baseline method as model:optimizer.
    #[arg(long, default_value = "mlp:adamw")]
    baseline: String,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    #[arg(long, default_value_t = 10)]
    min_seeds: usize,
    /// Report directory; defaults to --runs.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    force: bool,
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize, Deserialize)]
struct ReportArgs {
    /// aggregate.json written by `aggregate`.
    #[arg(long)]
    aggregate: PathBuf,
    /// Report directory; defaults to the directory of --aggregate.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    force: bool,
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
}

enum Failure {
    Invalid(anyhow::Error),
    Runtime(anyhow::Error),
}

type CmdResult<T> = Result<T, Failure>;

fn invalid(e: impl Into<anyhow::Error>) -> Failure {
    Failure::Invalid(e.into())
}

fn runtime(e: impl Into<anyhow::Error>) -> Failure {
    Failure::Runtime(e.into())
}

/// Input problems are validation failures; everything else is runtime.
fn classify(e: tabopt_core::Error) -> Failure {
    use tabopt_core::Error as E;
    match e {
        E::Config(_) | E::Data(_) | E::MissingFile(_) | E::Json(_) | E::Csv(_) => invalid(e),
        _ => runtime(e),
    }
}

/// Overlay the JSON object in `path` onto `args`.
fn apply_config<T: Serialize + DeserializeOwned>(args: T, path: Option<&Path>) -> CmdResult<T> {
    let Some(path) = path else { return Ok(args) };
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading config {}", path.display()))
        .map_err(invalid)?;
    let overrides: serde_json::Map<String, Value> = serde_json::from_str(&text)
        .with_context(|| format!("config {} must be a JSON object", path.display()))
        .map_err(invalid)?;
    let Value::Object(mut merged) = serde_json::to_value(&args).map_err(runtime)? else {
        unreachable!("argument structs serialize to objects");
    };
    for (key, v) in overrides {
        let key = key.replace('-', "_");
        if !merged.contains_key(&key) {
            return Err(invalid(anyhow!("unknown key {key:?} in {}", path.display())));
        }
        merged.insert(key, v);
    }
    serde_json::from_value(Value::Object(merged))
        .with_context(|| format!("config {}", path.display()))
        .map_err(invalid)
}

/// Inclusive `a..b`, `a..=b`, a comma list or a single seed.
fn parse_seeds(s: &str) -> anyhow::Result<Vec<u64>> {
    let seeds: Vec<u64> = if let Some((a, b)) = s.split_once("..") {
        let a: u64 = a.trim().parse().with_context(|| format!("seed range start in {s:?}"))?;
        let b: u64 = b.trim().trim_start_matches('=').parse().with_context(|| format!("seed range end in {s:?}"))?;
        if a > b {
            return Err(anyhow!("empty seed range {s:?}"));
        }
        (a..=b).collect()
    } else {
        s.split(',')
            .map(|p| p.trim().parse::<u64>().with_context(|| format!("seed {p:?}")))
            .collect::<anyhow::Result<_>>()?
    };
    let mut sorted = seeds.clone();
    sorted.sort_unstable();
    sorted.dedup();
    if sorted.len() != seeds.len() {
        return Err(anyhow!("duplicate seeds in {s:?}"));
    }
    Ok(seeds)
}

/// `--workers`, capped by `TABOPT_THREADS` when set.
fn effective_workers(requested: usize) -> CmdResult<usize> {
    if requested == 0 {
        return Err(invalid(anyhow!("--workers must be at least 1")));
    }
    match std::env::var(THREADS_ENV) {
        Ok(v) => {
            let cap: usize = v
                .trim()
                .parse()
                .ok()
                .filter(|&c| c > 0)
                .ok_or_else(|| invalid(anyhow!("{THREADS_ENV}={v:?} is not a positive integer")))?;
            Ok(requested.min(cap))
        }
        Err(_) => Ok(requested),
    }
}

fn train_config(t: &TrainingArgs) -> CmdResult<TrainConfig> {
    let mut cfg = TrainConfig::default();
    if let Some(p) = t.patience {
        cfg.patience = p;
    }
    if let Some(m) = t.max_epochs {
        cfg.max_epochs = m;
    }
    cfg.batch_size = t.batch_size;
    if let Some(p) = &t.precision {
        cfg.precision = serde_json::from_value::<Precision>(Value::String(p.to_lowercase()))
            .map_err(|_| invalid(anyhow!("precision must be f64 or f32, got {p:?}")))?;
    }
    cfg.validate().map_err(classify)?;
    Ok(cfg)
}

fn refuse_existing(paths: &[PathBuf], force: bool) -> CmdResult<()> {
    if let Some(p) = paths.iter().find(|p| p.exists()) {
        if !force {
            return Err(invalid(anyhow!("{} already exists; pass --force to overwrite", p.display())));
        }
    }
    for p in paths.iter().filter(|p| p.exists()) {
        std::fs::remove_file(p)
            .with_context(|| format!("removing {}", p.display()))
            .map_err(runtime)?;
    }
    Ok(())
}

fn load_encoded(dir: &Path) -> CmdResult<EncodedDataset> {
    if !dir.is_dir() {
        return Err(invalid(anyhow!("dataset directory {} not found", dir.display())));
    }
    let ds = load_dataset(dir).map_err(classify)?;
    EncodedDataset::prepare(&ds, PREPROCESS_SEED).map_err(classify)
}

fn method_dir(out: &Path, dataset: &str, model: &str, optimizer: &str) -> PathBuf {
    out.join(dataset).join(format!("{model}__{optimizer}"))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> CmdResult<()> {
    let text = serde_json::to_string_pretty(value).map_err(runtime)? + "\n";
    std::fs::write(path, text)
        .with_context(|| format!("writing {}", path.display()))
        .map_err(runtime)
}

fn gen_data(args: GenDataArgs) -> CmdResult<()> {
    let config = args.config.clone();
    let args = apply_config(args, config.as_deref())?;
    let kind: SyntheticKind = args.kind.parse().map_err(classify)?;
    let mut opts = SyntheticOptions::new(kind, args.n, args.seed);
    if let Some(s) = args.separation {
        opts.separation = s;
    }
    if let Some(s) = args.noise {
        opts.noise = s;
    }
    if let Some(b) = args.batch_size {
        opts.batch_size = b;
    }
    let files: Vec<PathBuf> = ["meta.json", "train.csv", "val.csv", "test.csv"]
        .iter()
        .map(|f| args.out.join(f))
        .collect();
    refuse_existing(&files, args.force)?;
    let mut ds = make_synthetic_with(&opts).map_err(classify)?;
    if let Some(name) = args.name {
        ds.meta.name = name;
        ds.meta.validate().map_err(classify)?;
    }
    write_dataset(&args.out, &ds).map_err(classify)?;
    println!(
        "wrote {} ({} train, {} val, {} test rows) to {}",
        ds.meta.name,
        ds.splits.train.len(),
        ds.splits.val.len(),
        ds.splits.test.len(),
        args.out.display()
    );
    Ok(())
}

fn run_tune(args: TuneArgs) -> CmdResult<()> {
    let config = args.config.clone();
    let args = apply_config(args, config.as_deref())?;
    let model: ModelKind = args.model.parse().map_err(classify)?;
    let mut space = space_for(model, &args.optimizer).map_err(classify)?;
    if let Some(arg) = &args.space {
        let text = if arg.trim_start().starts_with('{') {
            arg.clone()
        } else {
            std::fs::read_to_string(arg)
                .with_context(|| format!("reading space {arg}"))
                .map_err(invalid)?
        };
        let overrides: IndexMap<String, Dim> = serde_json::from_str(&text)
            .with_context(|| format!("space {arg}"))
            .map_err(invalid)?;
        space = space.with_overrides(&overrides).map_err(classify)?;
    }
    let train_cfg = train_config(&args.training)?;
    let workers = effective_workers(args.workers)?;
    let data = load_encoded(&args.data)?;
    let budget = args
        .budget
        .unwrap_or_else(|| budget_for(model, data.train.len() >= LARGE_DATASET_ROWS));
    if budget == 0 {
        return Err(invalid(anyhow!("--budget must be at least 1")));
    }
    space.budget = budget;
    let dir = method_dir(&args.out, &data.meta.name, &args.model, &args.optimizer);
    let trials_path = dir.join("tuning.jsonl");
    let best_path = dir.join("best_config.json");
    let space_path = dir.join("space.json");
    refuse_existing(&[trials_path.clone(), best_path.clone(), space_path.clone()], args.force)?;

    let train_cfg = train_cfg.with_seed(args.seed);
    let outcome = tune(&data, &space, budget, args.seed, &train_cfg, workers).map_err(classify)?;
    std::fs::create_dir_all(&dir)
        .with_context(|| format!("creating {}", dir.display()))
        .map_err(runtime)?;
    write_json(&space_path, &space)?;
    write_jsonl(&trials_path, &outcome.trials).map_err(runtime)?;
    let best = outcome.best_trial();
    let (model_config, optimizer_spec) = space.materialize(&best.config).map_err(classify)?;
    let record = BestConfig {
        dataset: data.meta.name.clone(),
        model: args.model.clone(),
        optimizer: args.optimizer.clone(),
        trial: best.trial,
        objective: best.objective.expect("best trial succeeded"),
        model_config,
        optimizer_spec,
    };
    write_json(&best_path, &record)?;
    let failed = outcome.trials.iter().filter(|t| t.objective.is_none()).count();
    println!(
        "{} trials ({} failed); best trial {} with validation objective {:.6}; wrote {}",
        outcome.trials.len(),
        failed,
        record.trial,
        record.objective,
        dir.display()
    );
    Ok(())
}

fn run_train(args: TrainArgs) -> CmdResult<()> {
    let config = args.config.clone();
    let args = apply_config(args, config.as_deref())?;
    let model: ModelKind = args.model.parse().map_err(classify)?;
    let space = space_for(model, &args.optimizer).map_err(classify)?;
    let seeds = parse_seeds(&args.seeds).map_err(invalid)?;
    let train_cfg = train_config(&args.training)?;
    let workers = effective_workers(args.workers)?;
    let data = load_encoded(&args.data)?;
    let dir = method_dir(&args.out, &data.meta.name, &args.model, &args.optimizer);

    let best_path = args.best_config.clone().or_else(|| {
        let p = dir.join("best_config.json");
        p.exists().then_some(p)
    });
    let (model_cfg, spec) = match &best_path {
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .with_context(|| format!("reading {}", p.display()))
                .map_err(invalid)?;
            let best: BestConfig = serde_json::from_str(&text)
                .with_context(|| format!("parsing {}", p.display()))
                .map_err(invalid)?;
            if best.model_config.kind() != model || best.optimizer_spec.method_id() != args.optimizer {
                return Err(invalid(anyhow!(
                    "{} holds {}:{}, not {}:{}",
                    p.display(),
                    best.model_config.kind(),
                    best.optimizer_spec.method_id(),
                    args.model,
                    args.optimizer
                )));
            }
            (best.model_config, best.optimizer_spec)
        }
        None => {
            eprintln!("no tuned configuration found; training the center of the search space");
            space.materialize(&space.center()).map_err(classify)?
        }
    };
    spec.validate().map_err(classify)?;

    let runs_path = dir.join("runs.jsonl");
    let timings_path = dir.join("timings.jsonl");
    refuse_existing(&[runs_path.clone(), timings_path.clone()], args.force)?;
    let results = run_protocol(&data, &model_cfg, &spec, &train_cfg, &seeds, workers).map_err(classify)?;
    std::fs::create_dir_all(&dir)
        .with_context(|| format!("creating {}", dir.display()))
        .map_err(runtime)?;
    write_jsonl(&runs_path, &results).map_err(runtime)?;
    let timings: Vec<Timing> = results.iter().map(Timing::from).collect();
    write_jsonl(&timings_path, &timings).map_err(runtime)?;
    let ok: Vec<f64> = results.iter().filter_map(|r| r.test_score_at_best).collect();
    let mean = ok.iter().sum::<f64>() / ok.len().max(1) as f64;
    println!(
        "{} runs ({} ok), mean test {:?} {:.6}; wrote {}",
        results.len(),
        ok.len(),
        data.meta.metric,
        mean,
        runs_path.display()
    );
    Ok(())
}

fn write_report(report: &AggregateReport, out: &Path, skip_aggregate: bool, force: bool) -> CmdResult<()> {
    let files: Vec<(&str, String)> = render_report(report)
        .map_err(runtime)?
        .into_iter()
        .filter(|(name, _)| !(skip_aggregate && *name == REPORT_FILES[0]))
        .collect();
    let paths: Vec<PathBuf> = files.iter().map(|(n, _)| out.join(n)).collect();
    refuse_existing(&paths, force)?;
    std::fs::create_dir_all(out)
        .with_context(|| format!("creating {}", out.display()))
        .map_err(runtime)?;
    for ((_, body), path) in files.iter().zip(&paths) {
        std::fs::write(path, body)
            .with_context(|| format!("writing {}", path.display()))
            .map_err(runtime)?;
    }
    for w in &report.warnings {
        eprintln!("warning: {w}");
    }
    println!("wrote {} report files to {}", paths.len(), out.display());
    Ok(())
}

fn run_aggregate(args: AggregateArgs) -> CmdResult<()> {
    let config = args.config.clone();
    let args = apply_config(args, config.as_deref())?;
    if !args.runs.exists() {
        return Err(invalid(anyhow!("{} not found", args.runs.display())));
    }
    if !(args.alpha > 0.0 && args.alpha < 1.0) {
        return Err(invalid(anyhow!("--alpha must lie in (0, 1)")));
    }
    let opts = AggregateOptions {
        baseline: args.baseline.clone(),
        alpha: args.alpha,
        min_seeds: args.min_seeds,
    };
    let results = load_results(&args.runs).map_err(classify)?;
    let report = aggregate(&results, &opts).map_err(classify)?;
    let out = args.out.clone().unwrap_or_else(|| args.runs.clone());
    write_report(&report, &out, false, args.force)
}

fn run_report(args: ReportArgs) -> CmdResult<()> {
    let config = args.config.clone();
    let args = apply_config(args, config.as_deref())?;
    let text = std::fs::read_to_string(&args.aggregate)
        .with_context(|| format!("reading {}", args.aggregate.display()))
        .map_err(invalid)?;
    let report: AggregateReport = serde_json::from_str(&text)
        .with_context(|| format!("parsing {}", args.aggregate.display()))
        .map_err(invalid)?;
    let out = args.out.clone().unwrap_or_else(|| {
        args.aggregate
            .parent()
            .map(Path::to_path_buf)
            .unwrap_or_else(|| PathBuf::from("."))
    });
    write_report(&report, &out, true, args.force)
}

fn run_selftest_cmd() -> CmdResult<()> {
    let checks = run_selftest();
    for c in &checks {
        println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
    }
    let failed = checks.iter().filter(|c| !c.passed).count();
    if failed > 0 {
        return Err(runtime(anyhow!("{failed} of {} checks failed", checks.len())));
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::GenData(a) => gen_data(a),
        Command::Tune(a) => run_tune(a),
        Command::Train(a) => run_train(a),
        Command::Aggregate(a) => run_aggregate(a),
        Command::Report(a) => run_report(a),
        Command::Selftest => run_selftest_cmd(),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Invalid(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seed_syntax() {
        assert_eq!(parse_seeds("0..9").unwrap(), (0..10).collect::<Vec<u64>>());
        assert_eq!(parse_seeds("2..=4").unwrap(), vec![2, 3, 4]);
        assert_eq!(parse_seeds("5,1,3").unwrap(), vec![5, 1, 3]);
        assert_eq!(parse_seeds("7").unwrap(), vec![7]);
        assert!(parse_seeds("3..1").is_err());
        assert!(parse_seeds("1,1").is_err());
        assert!(parse_seeds("a").is_err());
    }
}
