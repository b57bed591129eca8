//! Joint model and optimizer hyperparameter search.

pub mod space;
pub mod tpe;

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use space::{budget_for, space_for, Config, Dim, SearchSpace, LARGE_DATASET_ROWS};

use crate::data::EncodedDataset;
use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::optim::OptimizerSpec;
use crate::rng::RngStream;
use crate::train::{train_one, worker_pool, RunStatus, TrainConfig};

/// One line of `tuning.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub trial: usize,
    pub config: Config,
    pub status: RunStatus,
    /// Validation objective, higher is better. Present iff the trial is ok.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub objective: Option<f64>,
    /// Validation metric as reported.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub val_score: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub wall_time_seconds: f64,
}

/// Result of evaluating one configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialEval {
    pub objective: Option<f64>,
    pub val_score: Option<f64>,
    pub error: Option<String>,
}

impl TrialEval {
    pub fn ok(objective: f64) -> Self {
        Self {
            objective: Some(objective),
            val_score: Some(objective),
            error: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TuneOutcome {
    pub trials: Vec<TrialRecord>,
    pub best: usize,
}

impl TuneOutcome {
    pub fn best_trial(&self) -> &TrialRecord {
        &self.trials[self.best]
    }
}

/// Index of the best successful trial; ties go to the earliest.
pub fn best_trial_index(trials: &[TrialRecord]) -> Result<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, t) in trials.iter().enumerate() {
        if let (RunStatus::Ok, Some(o)) = (t.status, t.objective) {
            if best.is_none_or(|(_, b)| o > b) {
                best = Some((i, o));
            }
        }
    }
    best.map(|(i, _)| i)
        .ok_or_else(|| Error::Undefined("every tuning trial failed".into()))
}

/// Run `budget` trials of `objective` over `space`. Trials are sampled in
/// batches of `workers`; each batch sees the history of earlier batches
/// only, so results depend on the worker count but not on scheduling.
pub fn tune_with<F>(space: &SearchSpace, budget: usize, seed: u64, workers: usize, objective: F) -> Result<TuneOutcome>
where
    F: Fn(usize, &Config) -> Result<TrialEval> + Sync,
{
    space.validate()?;
    if budget == 0 {
        return Err(Error::Config("budget must be at least 1".into()));
    }
    let root = RngStream::new(seed).split("tpe");
    let batch = workers.max(1);
    let pool = worker_pool(batch)?;
    let mut trials: Vec<TrialRecord> = Vec::with_capacity(budget);
    while trials.len() < budget {
        let start = trials.len();
        let end = (start + batch).min(budget);
        let configs: Vec<Config> = {
            let history: Vec<tpe::Observation> = trials.iter().map(|t| (&t.config, t.objective)).collect();
            (start..end)
                .map(|i| tpe::sample(space, &history, &mut root.split_index("trial", i as u64)))
                .collect()
        };
        let evals: Vec<Result<(TrialEval, f64)>> = pool.install(|| {
            configs
                .par_iter()
                .enumerate()
                .map(|(j, c)| {
                    let t0 = Instant::now();
                    let e = objective(start + j, c)?;
                    Ok((e, t0.elapsed().as_secs_f64()))
                })
                .collect()
        });
        for (j, (config, ev)) in configs.into_iter().zip(evals).enumerate() {
            let (ev, secs) = ev?;
            let ok = ev.objective.is_some_and(f64::is_finite);
            trials.push(TrialRecord {
                trial: start + j,
                config,
                status: if ok { RunStatus::Ok } else { RunStatus::Failed },
                objective: if ok { ev.objective } else { None },
                val_score: if ok { ev.val_score } else { None },
                error: ev.error,
                wall_time_seconds: secs,
            });
        }
    }
    let best = best_trial_index(&trials)?;
    Ok(TuneOutcome { trials, best })
}

/// Tune on a prepared dataset; every trial trains once with `train_cfg.seed`.
pub fn tune(
    data: &EncodedDataset,
    space: &SearchSpace,
    budget: usize,
    seed: u64,
    train_cfg: &TrainConfig,
    workers: usize,
) -> Result<TuneOutcome> {
    tune_with(space, budget, seed, workers, |_, config| {
        let (model, spec) = space.materialize(config)?;
        let r = train_one(data, &model, &spec, train_cfg)?;
        Ok(TrialEval {
            objective: r.is_ok().then(|| r.objective()),
            val_score: r.best_val_score,
            error: r.error,
        })
    })
}

/// Winning configuration recovered from a trial log without retraining.
pub fn replay_best(space: &SearchSpace, trials: &[TrialRecord]) -> Result<(usize, ModelConfig, OptimizerSpec)> {
    let i = best_trial_index(trials)?;
    let (m, o) = space.materialize(&trials[i].config)?;
    Ok((trials[i].trial, m, o))
}

/// Contents of `best_config.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BestConfig {
    pub dataset: String,
    pub model: String,
    pub optimizer: String,
    pub trial: usize,
    pub objective: f64,
    pub model_config: ModelConfig,
    pub optimizer_spec: OptimizerSpec,
}
