//! Optimizer update rules behind one stepping interface.
//!
//! An [`OptimizerSpec`] names the rule and its hyperparameters; an
//! [`OptimizerState`] holds the step counter and per-parameter buffers.
//! [`step`] applies one update in place.

pub mod linalg;
mod rules;

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use linalg::{newton_schulz_orthogonalize, newton_schulz_with, symmetric_eigen};

use crate::constants::{
    ADAM_BETA1, ADAM_BETA2, ADAM_EPS, ADEMAMIX_ALPHA, ADOPT_EPS, LION_BETAS, SGD_DAMPENING, SGD_MOMENTUM,
    SIGNUM_MOMENTUM, SOAP_REFRESH,
};
use crate::error::{Error, Result};
use crate::nn::{GradSet, ParamSet, Tensor};

pub const STATE_FORMAT: &str = "tabopt.optimizer_state";
pub const STATE_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rule {
    Adamw,
    Sgd,
    Nadamw,
    Radam,
    Adopt,
    Adan,
    Adabelief,
    CautiousAdamw,
    Ademamix,
    Lion,
    Signum,
    Soap,
    Muon,
    ScheduleFreeAdamw,
}

impl Rule {
    pub const ALL: [Rule; 14] = [
        Rule::Adamw,
        Rule::Sgd,
        Rule::Nadamw,
        Rule::Radam,
        Rule::Adopt,
        Rule::Adan,
        Rule::Adabelief,
        Rule::CautiousAdamw,
        Rule::Ademamix,
        Rule::Lion,
        Rule::Signum,
        Rule::Soap,
        Rule::Muon,
        Rule::ScheduleFreeAdamw,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Rule::Adamw => "adamw",
            Rule::Sgd => "sgd",
            Rule::Nadamw => "nadamw",
            Rule::Radam => "radam",
            Rule::Adopt => "adopt",
            Rule::Adan => "adan",
            Rule::Adabelief => "adabelief",
            Rule::CautiousAdamw => "cautious_adamw",
            Rule::Ademamix => "ademamix",
            Rule::Lion => "lion",
            Rule::Signum => "signum",
            Rule::Soap => "soap",
            Rule::Muon => "muon",
            Rule::ScheduleFreeAdamw => "schedule_free_adamw",
        }
    }

    fn takes_betas(self) -> bool {
        !matches!(self, Rule::Sgd | Rule::Signum | Rule::Adan)
    }

    fn takes_eps(self) -> bool {
        !matches!(self, Rule::Sgd | Rule::Signum | Rule::Lion)
    }
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Rule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Rule::ALL
            .into_iter()
            .find(|r| r.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown optimizer rule {s:?}")))
    }
}

/// Suffix of method ids that add weight averaging to a rule.
pub const EMA_SUFFIX: &str = "_ema";

/// Rules that are benchmarked with weight averaging as separate methods.
pub const EMA_RULES: [Rule; 2] = [Rule::Adamw, Rule::Muon];

/// Split a method id such as `adamw_ema` into its rule and EMA flag.
pub fn parse_method(id: &str) -> Result<(Rule, bool)> {
    if let Ok(rule) = id.parse::<Rule>() {
        return Ok((rule, false));
    }
    match id.strip_suffix(EMA_SUFFIX).map(str::parse::<Rule>) {
        Some(Ok(rule)) if EMA_RULES.contains(&rule) => Ok((rule, true)),
        _ => Err(Error::Config(format!("unknown optimizer {id:?}"))),
    }
}

/// Every benchmark method id: the fourteen rules plus the EMA variants.
pub fn method_ids() -> Vec<String> {
    Rule::ALL
        .iter()
        .map(|r| r.as_str().to_string())
        .chain(EMA_RULES.iter().map(|r| format!("{r}{EMA_SUFFIX}")))
        .collect()
}

/// Rule, learning rate, weight decay and the rule-specific extras. Unset
/// extras take the rule's default.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerSpec {
    pub rule: Rule,
    pub lr: f64,
    #[serde(default)]
    pub weight_decay: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub betas: Option<(f64, f64)>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eps: Option<f64>,
    /// AdEMAMix mixing coefficient.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    /// Muon learning rate for the orthogonalized group.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub muon_lr: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub momentum: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dampening: Option<f64>,
    /// SOAP eigenbasis refresh period in steps.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub refresh: Option<u64>,
    /// Weight averaging decay; absent means off.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ema_decay: Option<f64>,
}

impl OptimizerSpec {
    pub fn new(rule: Rule, lr: f64) -> Self {
        Self {
            rule,
            lr,
            weight_decay: 0.0,
            betas: None,
            eps: None,
            alpha: None,
            muon_lr: None,
            momentum: None,
            dampening: None,
            refresh: None,
            ema_decay: None,
        }
    }

    pub fn with_weight_decay(mut self, wd: f64) -> Self {
        self.weight_decay = wd;
        self
    }

    pub fn betas(&self) -> (f64, f64) {
        self.betas.unwrap_or(match self.rule {
            Rule::Lion => LION_BETAS,
            _ => (ADAM_BETA1, ADAM_BETA2),
        })
    }

    pub fn eps(&self) -> f64 {
        self.eps.unwrap_or(match self.rule {
            Rule::Adopt => ADOPT_EPS,
            _ => ADAM_EPS,
        })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha.unwrap_or(ADEMAMIX_ALPHA)
    }

    pub fn muon_lr(&self) -> f64 {
        self.muon_lr.unwrap_or(self.lr)
    }

    pub fn momentum(&self) -> f64 {
        self.momentum.unwrap_or(match self.rule {
            Rule::Signum => SIGNUM_MOMENTUM,
            _ => SGD_MOMENTUM,
        })
    }

    pub fn dampening(&self) -> f64 {
        self.dampening.unwrap_or(SGD_DAMPENING)
    }

    pub fn refresh(&self) -> u64 {
        self.refresh.unwrap_or(SOAP_REFRESH)
    }

    /// Method id: the rule name, with a suffix when weights are averaged.
    pub fn method_id(&self) -> String {
        match self.ema_decay {
            Some(_) => format!("{}{EMA_SUFFIX}", self.rule),
            None => self.rule.to_string(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(format!("{}: {msg}", self.rule)));
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("lr must be positive, got {}", self.lr));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad(format!("weight_decay must be non-negative, got {}", self.weight_decay));
        }
        let unit = |v: f64| (0.0..1.0).contains(&v);
        let extras: [(&str, bool, bool); 7] = [
            ("betas", self.betas.is_some(), self.rule.takes_betas()),
            ("eps", self.eps.is_some(), self.rule.takes_eps()),
            ("alpha", self.alpha.is_some(), self.rule == Rule::Ademamix),
            ("muon_lr", self.muon_lr.is_some(), self.rule == Rule::Muon),
            ("momentum", self.momentum.is_some(), matches!(self.rule, Rule::Sgd | Rule::Signum)),
            ("dampening", self.dampening.is_some(), self.rule == Rule::Sgd),
            ("refresh", self.refresh.is_some(), self.rule == Rule::Soap),
        ];
        for (name, given, allowed) in extras {
            if given && !allowed {
                return bad(format!("{name} does not apply"));
            }
        }
        let (b1, b2) = self.betas();
        if !unit(b1) || !unit(b2) {
            return bad(format!("betas ({b1}, {b2}) outside [0, 1)"));
        }
        if self.eps().is_nan() || self.eps() <= 0.0 {
            return bad("eps must be positive".into());
        }
        if !(self.alpha() >= 0.0 && self.alpha().is_finite()) {
            return bad("alpha must be non-negative".into());
        }
        if !(self.muon_lr() > 0.0 && self.muon_lr().is_finite()) {
            return bad("muon_lr must be positive".into());
        }
        if !unit(self.momentum()) || !(0.0..=1.0).contains(&self.dampening()) {
            return bad("momentum/dampening outside [0, 1)".into());
        }
        if self.refresh() == 0 {
            return bad("refresh must be at least 1".into());
        }
        if let Some(d) = self.ema_decay {
            if !(d > 0.0 && d < 1.0) {
                return bad(format!("ema_decay {d} outside (0, 1)"));
            }
        }
        Ok(())
    }
}

/// Step counter and per-parameter buffers, keyed like the [`ParamSet`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    pub format: String,
    pub version: u32,
    pub rule: Rule,
    pub t: u64,
    pub buffers: BTreeMap<String, BTreeMap<String, Tensor>>,
}

impl OptimizerState {
    pub fn new(rule: Rule) -> Self {
        Self {
            format: STATE_FORMAT.into(),
            version: STATE_VERSION,
            rule,
            t: 0,
            buffers: BTreeMap::new(),
        }
    }

    pub fn buffer(&self, param: &str, name: &str) -> Option<&Tensor> {
        self.buffers.get(param)?.get(name)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let s: Self = serde_json::from_str(text)?;
        if s.format != STATE_FORMAT || s.version != STATE_VERSION {
            return Err(Error::Config(format!("unsupported state format {} v{}", s.format, s.version)));
        }
        for (param, bufs) in &s.buffers {
            if let Some((name, _)) = bufs.iter().find(|(_, t)| !t.is_finite()) {
                return Err(Error::NonFinite(format!("state buffer {param}/{name}")));
            }
        }
        Ok(s)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

/// Apply one update of `spec.rule` to `params` in place.
pub fn step(spec: &OptimizerSpec, state: &mut OptimizerState, params: &mut ParamSet, grads: &GradSet) -> Result<()> {
    if state.rule != spec.rule {
        return Err(Error::Config(format!("state belongs to {}, spec is {}", state.rule, spec.rule)));
    }
    grads.check_matches(params)?;
    if let Some(name) = grads.first_non_finite() {
        return Err(Error::NonFinite(format!("gradient {name}")));
    }
    let t = state.t + 1;
    for (name, param) in params.iter_mut() {
        let g = grads.get(name).expect("checked above");
        let bufs = state.buffers.entry(name.to_string()).or_default();
        rules::apply(spec, t, param, g, bufs)?;
        if !param.value.is_finite() {
            return Err(Error::NonFinite(format!("update of {name}")));
        }
    }
    state.t = t;
    Ok(())
}

/// Weights to evaluate: the averaged iterate for Schedule-Free, the live
/// weights otherwise.
pub fn eval_params(spec: &OptimizerSpec, state: &OptimizerState, params: &ParamSet) -> ParamSet {
    let mut out = params.clone();
    if spec.rule == Rule::ScheduleFreeAdamw {
        for (name, p) in out.iter_mut() {
            if let Some(x) = state.buffer(name, "x") {
                p.value = x.clone();
            }
        }
    }
    out
}

/// Spec and state owned together by one training run.
#[derive(Debug, Clone, PartialEq)]
pub struct Optimizer {
    pub spec: OptimizerSpec,
    pub state: OptimizerState,
}

impl Optimizer {
    pub fn new(spec: OptimizerSpec) -> Result<Self> {
        spec.validate()?;
        let state = OptimizerState::new(spec.rule);
        Ok(Self { spec, state })
    }

    pub fn step(&mut self, params: &mut ParamSet, grads: &GradSet) -> Result<()> {
        step(&self.spec, &mut self.state, params, grads)
    }

    pub fn eval_params(&self, params: &ParamSet) -> ParamSet {
        eval_params(&self.spec, &self.state, params)
    }
}
