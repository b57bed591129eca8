use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::constants::{DEFAULT_BUDGET, LARGE_DATASET_BUDGET};
use crate::error::{Error, Result};
use crate::model::{ModelConfig, ModelKind};
use crate::optim::{parse_method, OptimizerSpec, Rule};
use crate::rng::RngStream;

fn one() -> i64 {
    1
}

/// One search dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum Dim {
    IntUniform {
        low: i64,
        high: i64,
        #[serde(default = "one")]
        step: i64,
    },
    Uniform {
        low: f64,
        high: f64,
    },
    LogUniform {
        low: f64,
        high: f64,
    },
    /// Zero or a draw from `inner`, each with prior probability one half.
    ZeroOr {
        inner: Box<Dim>,
    },
    Categorical {
        values: Vec<Value>,
    },
    Constant {
        value: Value,
    },
}

impl Dim {
    pub fn int(low: i64, high: i64, step: i64) -> Self {
        Dim::IntUniform { low, high, step }
    }

    pub fn uniform(low: f64, high: f64) -> Self {
        Dim::Uniform { low, high }
    }

    pub fn log_uniform(low: f64, high: f64) -> Self {
        Dim::LogUniform { low, high }
    }

    pub fn zero_or(inner: Dim) -> Self {
        Dim::ZeroOr { inner: Box::new(inner) }
    }

    pub fn constant(value: impl Into<Value>) -> Self {
        Dim::Constant { value: value.into() }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        match self {
            Dim::IntUniform { low, high, step } => {
                if low > high || *step <= 0 || (high - low) % step != 0 {
                    return bad(format!("int range [{low}, {high}] step {step}"));
                }
            }
            Dim::Uniform { low, high } => {
                if !(low.is_finite() && high.is_finite() && low <= high) {
                    return bad(format!("uniform range [{low}, {high}]"));
                }
            }
            Dim::LogUniform { low, high } => {
                if !(*low > 0.0 && high.is_finite() && low <= high) {
                    return bad(format!("log-uniform range [{low}, {high}]"));
                }
            }
            Dim::ZeroOr { inner } => {
                if matches!(**inner, Dim::ZeroOr { .. } | Dim::Constant { .. } | Dim::Categorical { .. }) {
                    return bad("zero-or needs a numeric inner dimension".into());
                }
                inner.validate()?;
            }
            Dim::Categorical { values } => {
                if values.is_empty() {
                    return bad("empty categorical".into());
                }
            }
            Dim::Constant { .. } => {}
        }
        Ok(())
    }

    /// Number of grid points of an integer dimension.
    pub fn int_cells(&self) -> Option<i64> {
        match self {
            Dim::IntUniform { low, high, step } => Some((high - low) / step + 1),
            _ => None,
        }
    }

    /// Whether `v` is a value this dimension can produce.
    pub fn contains(&self, v: &Value) -> bool {
        match self {
            Dim::IntUniform { low, high, step } => {
                v.as_i64().is_some_and(|x| x >= *low && x <= *high && (x - low) % step == 0)
            }
            Dim::Uniform { low, high } | Dim::LogUniform { low, high } => {
                v.as_f64().is_some_and(|x| x >= *low && x <= *high)
            }
            Dim::ZeroOr { inner } => v.as_f64() == Some(0.0) || inner.contains(v),
            Dim::Categorical { values } => values.contains(v),
            Dim::Constant { value } => value == v,
        }
    }

    /// Deterministic middle point: the median grid point, the arithmetic or
    /// geometric midpoint, zero for zero-or and the first categorical value.
    pub fn center(&self) -> Value {
        match self {
            Dim::IntUniform { low, step, .. } => Value::from(low + (self.int_cells().unwrap() - 1) / 2 * step),
            Dim::Uniform { low, high } => Value::from(0.5 * (low + high)),
            Dim::LogUniform { low, high } => Value::from((low * high).sqrt().clamp(*low, *high)),
            Dim::ZeroOr { .. } => Value::from(0.0),
            Dim::Categorical { values } => values[0].clone(),
            Dim::Constant { value } => value.clone(),
        }
    }

    /// Draw from the prior.
    pub fn sample_prior(&self, rng: &mut RngStream) -> Value {
        match self {
            Dim::IntUniform { low, step, .. } => {
                let k = rng.below(self.int_cells().unwrap() as usize) as i64;
                Value::from(low + k * step)
            }
            Dim::Uniform { low, high } => Value::from(rng.uniform_range(*low, *high)),
            Dim::LogUniform { low, high } => {
                Value::from(rng.uniform_range(low.ln(), high.ln()).exp().clamp(*low, *high))
            }
            Dim::ZeroOr { inner } => {
                if rng.uniform() < crate::constants::ZERO_OR_PRIOR {
                    Value::from(0.0)
                } else {
                    inner.sample_prior(rng)
                }
            }
            Dim::Categorical { values } => values[rng.below(values.len())].clone(),
            Dim::Constant { value } => value.clone(),
        }
    }
}

/// Sampled values keyed by dimension name.
pub type Config = IndexMap<String, Value>;

pub const MODEL_PREFIX: &str = "model.";
/// Training rows from which a dataset counts as large for budgeting.
pub const LARGE_DATASET_ROWS: usize = 100_000;
pub const OPTIMIZER_PREFIX: &str = "optimizer.";

/// Joint model and optimizer search space with its trial budget.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SearchSpace {
    pub model: ModelKind,
    pub optimizer: String,
    pub budget: usize,
    pub dims: IndexMap<String, Dim>,
}

fn lr_range(rule: Rule) -> (f64, f64) {
    match rule {
        Rule::Adan => (1e-4, 1e-2),
        Rule::Lion | Rule::Signum => (1e-5, 1e-3),
        Rule::ScheduleFreeAdamw => (1e-4, 0.03),
        Rule::Sgd => (1e-3, 0.1),
        _ => (3e-5, 1e-3),
    }
}

/// Trial budget for a model; packed ensembles get fewer trials on large
/// datasets.
pub fn budget_for(model: ModelKind, large_dataset: bool) -> usize {
    if large_dataset && model == ModelKind::TabmPacked {
        LARGE_DATASET_BUDGET
    } else {
        DEFAULT_BUDGET
    }
}

/// The benchmark search space for a model and a method id (rule name,
/// optionally with the EMA suffix).
pub fn space_for(model: ModelKind, method: &str) -> Result<SearchSpace> {
    let (rule, ema) = parse_method(method)?;
    let mut dims: IndexMap<String, Dim> = IndexMap::new();
    let mut add = |name: &str, d: Dim| dims.insert(name.to_string(), d);
    let width = Dim::int(64, 1024, 16);
    let dropout = Dim::zero_or(Dim::uniform(0.0, 0.5));
    let model_wd = match model {
        ModelKind::Mlp => {
            add("model.n_layers", Dim::int(1, 6, 1));
            add("model.width", width);
            add("model.dropout", dropout);
            None
        }
        ModelKind::MlpPle => {
            add("model.n_layers", Dim::int(1, 5, 1));
            add("model.width", width);
            add("model.dropout", dropout);
            add("model.d_embedding", Dim::int(8, 32, 4));
            add("model.n_bins", Dim::int(2, 128, 1));
            Some(Dim::zero_or(Dim::log_uniform(0.001, 1.0)))
        }
        ModelKind::TabmPacked => {
            add("model.k", Dim::constant(16));
            add("model.n_layers", Dim::int(1, 5, 1));
            add("model.width", width);
            add("model.dropout", dropout);
            Some(Dim::zero_or(Dim::log_uniform(0.005, 5.0)))
        }
    };
    let (lo, hi) = lr_range(rule);
    add("optimizer.lr", Dim::log_uniform(lo, hi));
    add(
        "optimizer.weight_decay",
        model_wd.unwrap_or_else(|| Dim::log_uniform(0.005, 5.0)),
    );
    match rule {
        Rule::Muon => {
            add("optimizer.muon_lr", Dim::log_uniform(1e-4, 0.03));
            add("optimizer.betas", Dim::constant(serde_json::json!([0.9, 0.999])));
            add("optimizer.eps", Dim::constant(1e-8));
        }
        Rule::Ademamix => {
            add("optimizer.alpha", Dim::uniform(1.0, 8.0));
        }
        Rule::Sgd => {
            add("optimizer.momentum", Dim::constant(0.9));
            add("optimizer.dampening", Dim::constant(0.9));
        }
        _ => {}
    }
    if ema {
        add("optimizer.ema_decay", Dim::log_uniform(0.9, 0.999));
    }
    let space = SearchSpace {
        model,
        optimizer: method.to_string(),
        budget: budget_for(model, false),
        dims,
    };
    space.validate()?;
    Ok(space)
}

impl SearchSpace {
    pub fn validate(&self) -> Result<()> {
        parse_method(&self.optimizer)?;
        if self.budget == 0 {
            return Err(Error::Config("budget must be at least 1".into()));
        }
        for (name, d) in &self.dims {
            if !(name.starts_with(MODEL_PREFIX) || name.starts_with(OPTIMIZER_PREFIX)) {
                return Err(Error::Config(format!(
                    "dimension {name} must start with {MODEL_PREFIX} or {OPTIMIZER_PREFIX}"
                )));
            }
            d.validate().map_err(|e| Error::Config(format!("{name}: {e}")))?;
        }
        Ok(())
    }

    /// Replace or add dimensions, keeping the original order for existing
    /// names.
    pub fn with_overrides(mut self, overrides: &IndexMap<String, Dim>) -> Result<Self> {
        for (name, d) in overrides {
            self.dims.insert(name.clone(), d.clone());
        }
        self.validate()?;
        Ok(self)
    }

    pub fn contains(&self, config: &Config) -> bool {
        config.len() == self.dims.len() && self.dims.iter().all(|(n, d)| config.get(n).is_some_and(|v| d.contains(v)))
    }

    /// Configuration made of every dimension's center, used when a method is
    /// trained without tuning.
    pub fn center(&self) -> Config {
        self.dims.iter().map(|(name, d)| (name.clone(), d.center())).collect()
    }

    pub fn sample_prior(&self, rng: &mut RngStream) -> Config {
        self.dims
            .iter()
            .map(|(name, d)| (name.clone(), d.sample_prior(rng)))
            .collect()
    }

    /// Model and optimizer settings for a sampled configuration.
    pub fn materialize(&self, config: &Config) -> Result<(ModelConfig, OptimizerSpec)> {
        let (rule, ema) = parse_method(&self.optimizer)?;
        let mut model = Map::new();
        model.insert("kind".into(), Value::from(self.model.as_str()));
        let mut opt = Map::new();
        opt.insert("rule".into(), Value::from(rule.as_str()));
        for (name, v) in config {
            if let Some(key) = name.strip_prefix(MODEL_PREFIX) {
                model.insert(key.into(), v.clone());
            } else if let Some(key) = name.strip_prefix(OPTIMIZER_PREFIX) {
                opt.insert(key.into(), v.clone());
            } else {
                return Err(Error::Config(format!("unknown dimension {name}")));
            }
        }
        let model: ModelConfig = serde_json::from_value(Value::Object(model))
            .map_err(|e| Error::Config(format!("model settings: {e}")))?;
        let spec: OptimizerSpec = serde_json::from_value(Value::Object(opt))
            .map_err(|e| Error::Config(format!("optimizer settings: {e}")))?;
        if spec.ema_decay.is_some() != ema {
            return Err(Error::Config(format!("{} needs ema_decay iff it averages weights", self.optimizer)));
        }
        spec.validate()?;
        Ok((model, spec))
    }
}
