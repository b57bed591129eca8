//! Early-stopped minibatch training and multi-seed evaluation.

pub mod metrics;

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use metrics::{accuracy, evaluate, orient, rmse, roc_auc};

use crate::constants::{pinned, PinnedConstants, CLIP_THRESHOLD, MAX_EPOCHS, PATIENCE};
use crate::data::{EncodedDataset, EncodedSplit, Metric};
use crate::ema::EmaTracker;
use crate::error::{Error, Result};
use crate::model::{ModelConfig, Network};
use crate::nn::{global_grad_clip, ParamSet, Precision, Tensor};
use crate::optim::{Optimizer, OptimizerSpec};
use crate::rng::RngStream;

pub const RUNS_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default = "default_patience")]
    pub patience: usize,
    #[serde(default = "default_clip")]
    pub clip_threshold: f64,
    #[serde(default = "default_max_epochs")]
    pub max_epochs: usize,
    /// Overrides the dataset's batch size when set.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub batch_size: Option<usize>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub precision: Precision,
}

fn default_patience() -> usize {
    PATIENCE
}

fn default_clip() -> f64 {
    CLIP_THRESHOLD
}

fn default_max_epochs() -> usize {
    MAX_EPOCHS
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            patience: PATIENCE,
            clip_threshold: CLIP_THRESHOLD,
            max_epochs: MAX_EPOCHS,
            batch_size: None,
            seed: 0,
            precision: Precision::F64,
        }
    }
}

impl TrainConfig {
    pub fn with_seed(&self, seed: u64) -> Self {
        Self { seed, ..self.clone() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.patience == 0 {
            return Err(Error::Config("patience must be at least 1".into()));
        }
        if !(self.clip_threshold > 0.0 && self.clip_threshold.is_finite()) {
            return Err(Error::Config(format!("clip threshold {}", self.clip_threshold)));
        }
        if self.max_epochs == 0 {
            return Err(Error::Config("max_epochs must be at least 1".into()));
        }
        if self.batch_size == Some(0) {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunStatus {
    Ok,
    Failed,
}

/// Outcome of one training run. Scores are metric values as reported
/// (RMSE positive) and are absent for failed runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub schema_version: u32,
    pub dataset: String,
    pub model: String,
    pub optimizer: String,
    pub seed: u64,
    pub status: RunStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub metric: Metric,
    pub best_val_score: Option<f64>,
    pub test_score_at_best: Option<f64>,
    pub best_epoch: usize,
    pub epochs_run: usize,
    /// Population standard deviation of the test labels.
    pub test_label_std: f64,
    pub model_config: ModelConfig,
    pub optimizer_spec: OptimizerSpec,
    pub train_config: TrainConfig,
    pub constants: PinnedConstants,
    /// Kept out of `runs.jsonl` so that file is reproducible byte for byte.
    #[serde(skip)]
    pub wall_time_seconds: f64,
}

impl RunResult {
    pub fn is_ok(&self) -> bool {
        self.status == RunStatus::Ok
    }

    /// Validation objective, higher is better; `-inf` for failed runs.
    pub fn objective(&self) -> f64 {
        match (self.status, self.best_val_score) {
            (RunStatus::Ok, Some(v)) => orient(self.metric, v),
            _ => f64::NEG_INFINITY,
        }
    }
}

/// Wall-time sidecar record, one per run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub dataset: String,
    pub model: String,
    pub optimizer: String,
    pub seed: u64,
    pub wall_time_seconds: f64,
}

impl From<&RunResult> for Timing {
    fn from(r: &RunResult) -> Self {
        Self {
            dataset: r.dataset.clone(),
            model: r.model.clone(),
            optimizer: r.optimizer.clone(),
            seed: r.seed,
            wall_time_seconds: r.wall_time_seconds,
        }
    }
}

/// Source of validation and test scores for a set of weights.
pub trait Evaluator {
    fn metric(&self) -> Metric;
    fn validation(&mut self, net: &Network, params: &ParamSet) -> Result<f64>;
    fn test(&mut self, net: &Network, params: &ParamSet) -> Result<f64>;
}

/// Scores the validation and test splits of a prepared dataset.
pub struct SplitEvaluator<'a> {
    pub data: &'a EncodedDataset,
}

impl SplitEvaluator<'_> {
    fn score(&self, net: &Network, params: &ParamSet, split: &EncodedSplit) -> Result<f64> {
        let pred = net.predict(params, split)?;
        let pred = if net.n_classes.is_none() {
            let labels = &self.data.preprocessor.labels;
            pred.map(|z| labels.inverse(z))
        } else {
            pred
        };
        evaluate(self.data.meta.metric, &pred, &split.y)
    }
}

impl Evaluator for SplitEvaluator<'_> {
    fn metric(&self) -> Metric {
        self.data.meta.metric
    }

    fn validation(&mut self, net: &Network, params: &ParamSet) -> Result<f64> {
        self.score(net, params, &self.data.val)
    }

    fn test(&mut self, net: &Network, params: &ParamSet) -> Result<f64> {
        self.score(net, params, &self.data.test)
    }
}

/// What a training loop produced, before it is labelled as a [`RunResult`].
#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub best_val_score: Option<f64>,
    pub test_score_at_best: Option<f64>,
    pub best_epoch: usize,
    pub epochs_run: usize,
    pub failure: Option<String>,
    pub wall_time_seconds: f64,
    /// Weights evaluated at the best epoch.
    pub best_params: Option<ParamSet>,
}

/// Tracks the best validation objective and the patience counter.
#[derive(Debug, Clone, PartialEq)]
pub struct EarlyStopping {
    pub patience: usize,
    pub best: Option<f64>,
    pub best_epoch: usize,
    pub since_best: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        Self {
            patience,
            best: None,
            best_epoch: 0,
            since_best: 0,
        }
    }

    /// Record the objective for `epoch`; returns whether it improved
    /// strictly on the best so far.
    pub fn observe(&mut self, epoch: usize, objective: f64) -> bool {
        if self.best.is_none_or(|b| objective > b) {
            self.best = Some(objective);
            self.best_epoch = epoch;
            self.since_best = 0;
            true
        } else {
            self.since_best += 1;
            false
        }
    }

    pub fn should_stop(&self) -> bool {
        self.since_best >= self.patience
    }
}

enum Failure {
    NonFinite(String),
}

fn is_non_finite(e: &Error) -> bool {
    matches!(e, Error::NonFinite(_))
}

/// Train `net` on `train` until early stopping, then score the best weights
/// on the test split once.
pub fn train_loop(
    net: &Network,
    train: &EncodedSplit,
    spec: &OptimizerSpec,
    cfg: &TrainConfig,
    batch_size: usize,
    evaluator: &mut dyn Evaluator,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if batch_size == 0 || batch_size > train.len() {
        return Err(Error::Config(format!(
            "batch size {batch_size} for {} training rows",
            train.len()
        )));
    }
    let metric = evaluator.metric();
    let started = Instant::now();
    let root = RngStream::new(cfg.seed);
    let mut params = net.init_params(cfg.seed)?;
    let mut opt = Optimizer::new(spec.clone())?;
    let mut ema = spec.ema_decay.map(|d| EmaTracker::new(d, &params)).transpose()?;
    let mut stopper = EarlyStopping::new(cfg.patience);
    let mut best_params: Option<ParamSet> = None;
    let mut best_val = None;
    let mut epochs_run = 0;
    let mut failure: Option<Failure> = None;

    'epochs: for epoch in 1..=cfg.max_epochs {
        epochs_run = epoch;
        let mut order: Vec<usize> = (0..train.len()).collect();
        root.split_index("shuffle", epoch as u64).shuffle(&mut order);
        let mut drop_rng = root.split_index("dropout", epoch as u64);
        for chunk in order.chunks(batch_size) {
            let batch = train.select(chunk);
            let step = net
                .loss_and_grad(&params, &batch, Some(&mut drop_rng))
                .and_then(|(loss, mut grads)| {
                    if !loss.is_finite() {
                        return Err(Error::NonFinite("training loss".into()));
                    }
                    global_grad_clip(&mut grads, cfg.clip_threshold)?;
                    opt.step(&mut params, &grads)
                });
            match step {
                Ok(()) => {}
                Err(e) if is_non_finite(&e) => {
                    failure = Some(Failure::NonFinite(e.to_string()));
                    break 'epochs;
                }
                Err(e) => return Err(e),
            }
            if let Some(t) = ema.as_mut() {
                t.update(&params)?;
            }
        }
        let eval_params = match &ema {
            Some(t) => t.eval_params().clone(),
            None => opt.eval_params(&params),
        };
        let val = match evaluator.validation(net, &eval_params) {
            Ok(v) if v.is_finite() => v,
            Ok(_) => {
                failure = Some(Failure::NonFinite("validation score".into()));
                break;
            }
            Err(e) if is_non_finite(&e) => {
                failure = Some(Failure::NonFinite(e.to_string()));
                break;
            }
            Err(e) => return Err(e),
        };
        if stopper.observe(epoch, orient(metric, val)) {
            best_val = Some(val);
            best_params = Some(eval_params);
        }
        if stopper.should_stop() {
            break;
        }
    }

    let (test, failure) = match failure {
        Some(Failure::NonFinite(msg)) => (None, Some(msg)),
        None => {
            let best = best_params.as_ref().expect("at least one epoch ran");
            (Some(evaluator.test(net, best)?), None)
        }
    };
    let failed = failure.is_some();
    Ok(TrainOutcome {
        best_val_score: if failed { None } else { best_val },
        test_score_at_best: test,
        best_epoch: stopper.best_epoch,
        epochs_run,
        failure,
        wall_time_seconds: started.elapsed().as_secs_f64(),
        best_params: if failed { None } else { best_params },
    })
}

/// Train one configuration on a prepared dataset with `cfg.seed`.
pub fn train_one(
    data: &EncodedDataset,
    model_cfg: &ModelConfig,
    spec: &OptimizerSpec,
    cfg: &TrainConfig,
) -> Result<RunResult> {
    Ok(train_one_with_params(data, model_cfg, spec, cfg)?.0)
}

/// As [`train_one`], also returning the best weights of successful runs.
pub fn train_one_with_params(
    data: &EncodedDataset,
    model_cfg: &ModelConfig,
    spec: &OptimizerSpec,
    cfg: &TrainConfig,
) -> Result<(RunResult, Option<ParamSet>)> {
    spec.validate()?;
    let net = Network::build(model_cfg, data, cfg.precision)?;
    let batch_size = cfg.batch_size.unwrap_or(data.meta.batch_size).min(data.train.len());
    let mut evaluator = SplitEvaluator { data };
    let out = train_loop(&net, &data.train, spec, cfg, batch_size, &mut evaluator)?;
    let result = RunResult {
        schema_version: RUNS_SCHEMA_VERSION,
        dataset: data.meta.name.clone(),
        model: model_cfg.kind().to_string(),
        optimizer: spec.method_id(),
        seed: cfg.seed,
        status: if out.failure.is_some() {
            RunStatus::Failed
        } else {
            RunStatus::Ok
        },
        error: out.failure,
        metric: data.meta.metric,
        best_val_score: out.best_val_score,
        test_score_at_best: out.test_score_at_best,
        best_epoch: out.best_epoch,
        epochs_run: out.epochs_run,
        test_label_std: data.test_label_std,
        model_config: model_cfg.clone(),
        optimizer_spec: spec.clone(),
        train_config: cfg.clone(),
        constants: pinned(),
        wall_time_seconds: out.wall_time_seconds,
    };
    Ok((result, out.best_params))
}

/// Thread pool with `workers` threads (at least one).
pub fn worker_pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))
}

/// One run per seed, in seed order, using up to `workers` threads. Results
/// do not depend on the worker count.
pub fn run_protocol(
    data: &EncodedDataset,
    model_cfg: &ModelConfig,
    spec: &OptimizerSpec,
    cfg: &TrainConfig,
    seeds: &[u64],
    workers: usize,
) -> Result<Vec<RunResult>> {
    if seeds.is_empty() {
        return Err(Error::Config("no seeds given".into()));
    }
    let pool = worker_pool(workers)?;
    pool.install(|| {
        seeds
            .par_iter()
            .map(|&s| train_one(data, model_cfg, spec, &cfg.with_seed(s)))
            .collect()
    })
}

/// Append records as JSON lines.
pub fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<()> {
    let mut file = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    let mut buf = Vec::new();
    for r in records {
        serde_json::to_writer(&mut buf, r)?;
        buf.push(b'\n');
    }
    file.write_all(&buf).map_err(|e| Error::io(path, e))
}

pub fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(Error::from))
        .collect()
}

/// Class probabilities or label-unit predictions of `params` on a split.
pub fn predict_split(net: &Network, params: &ParamSet, data: &EncodedDataset, split: &EncodedSplit) -> Result<Tensor> {
    let pred = net.predict(params, split)?;
    Ok(if net.n_classes.is_none() {
        pred.map(|z| data.preprocessor.labels.inverse(z))
    } else {
        pred
    })
}
