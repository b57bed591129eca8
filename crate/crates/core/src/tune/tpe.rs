//! Tree-structured Parzen estimator, one independent density per dimension.

use serde_json::Value;
use statrs::function::erf::erfc;

use super::space::{Config, Dim, SearchSpace};
use crate::constants::{TPE_CANDIDATES, TPE_GAMMA, TPE_MAX_FLOOR_DIVISOR, TPE_STARTUP, ZERO_OR_PRIOR};
use crate::rng::RngStream;

/// A finished trial as the sampler sees it: its configuration and the
/// objective (higher is better), `None` for failed trials.
pub type Observation<'a> = (&'a Config, Option<f64>);

fn phi(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

/// Truncated Gaussian mixture on `[low, high]` with a wide prior component.
#[derive(Debug, Clone)]
struct Parzen {
    low: f64,
    high: f64,
    mus: Vec<f64>,
    sigmas: Vec<f64>,
    weights: Vec<f64>,
}

impl Parzen {
    fn fit(obs: &[f64], low: f64, high: f64, min_sigma: f64) -> Self {
        let range = high - low;
        let n = obs.len();
        let sigma = if n >= 2 {
            let mean = obs.iter().sum::<f64>() / n as f64;
            let sd = (obs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt();
            1.06 * sd * (n as f64).powf(-0.2)
        } else {
            range
        };
        // Floor shrinking with the sample size keeps a tight cluster of good
        // trials from collapsing the density onto one point.
        let floor = range / (n + 1).min(TPE_MAX_FLOOR_DIVISOR) as f64;
        let sigma = sigma.clamp(min_sigma.max(floor), range.max(min_sigma));
        let mut mus = obs.to_vec();
        let mut sigmas = vec![sigma; n];
        mus.push(0.5 * (low + high));
        sigmas.push(range.max(min_sigma));
        let weights = vec![1.0 / (n + 1) as f64; n + 1];
        Self {
            low,
            high,
            mus,
            sigmas,
            weights,
        }
    }

    fn mass(&self, i: usize, a: f64, b: f64) -> f64 {
        let (mu, s) = (self.mus[i], self.sigmas[i]);
        phi((b - mu) / s) - phi((a - mu) / s)
    }

    /// Density at `x` (continuous case).
    fn density(&self, x: f64) -> f64 {
        (0..self.mus.len())
            .map(|i| {
                let (mu, s) = (self.mus[i], self.sigmas[i]);
                let z = (x - mu) / s;
                let pdf = (-0.5 * z * z).exp() / (s * (2.0 * std::f64::consts::PI).sqrt());
                self.weights[i] * pdf / self.mass(i, self.low, self.high).max(1e-300)
            })
            .sum()
    }

    /// Probability of the unit cell around integer index `k` (the support is
    /// `[low − ½, high + ½]`).
    fn cell(&self, k: f64) -> f64 {
        (0..self.mus.len())
            .map(|i| {
                let z = self.mass(i, self.low - 0.5, self.high + 0.5).max(1e-300);
                self.weights[i] * self.mass(i, k - 0.5, k + 0.5) / z
            })
            .sum()
    }

    fn sample(&self, rng: &mut RngStream, lo: f64, hi: f64) -> f64 {
        let u = rng.uniform();
        let mut acc = 0.0;
        let mut idx = self.weights.len() - 1;
        for (i, w) in self.weights.iter().enumerate() {
            acc += w;
            if u < acc {
                idx = i;
                break;
            }
        }
        let (mu, s) = (self.mus[idx], self.sigmas[idx]);
        for _ in 0..64 {
            let x = mu + s * rng.normal();
            if (lo..=hi).contains(&x) {
                return x;
            }
        }
        mu.clamp(lo, hi)
    }
}

/// Fitted density for one dimension.
#[derive(Debug, Clone)]
enum Estimator {
    Fixed,
    Continuous { parzen: Parzen, log: bool },
    Int { parzen: Parzen, low: i64, step: i64 },
    ZeroOr { p_zero: f64, inner: Box<Estimator> },
    Categorical { probs: Vec<f64> },
}

fn numeric(v: &Value) -> f64 {
    v.as_f64().unwrap_or(f64::NAN)
}

impl Estimator {
    fn fit(dim: &Dim, values: &[&Value]) -> Self {
        match dim {
            Dim::Constant { .. } => Estimator::Fixed,
            Dim::Uniform { low, high } => {
                let obs: Vec<f64> = values.iter().map(|v| numeric(v)).filter(|x| x.is_finite()).collect();
                Estimator::Continuous {
                    parzen: Parzen::fit(&obs, *low, *high, 0.0),
                    log: false,
                }
            }
            Dim::LogUniform { low, high } => {
                let obs: Vec<f64> = values
                    .iter()
                    .map(|v| numeric(v))
                    .filter(|x| *x > 0.0)
                    .map(f64::ln)
                    .collect();
                Estimator::Continuous {
                    parzen: Parzen::fit(&obs, low.ln(), high.ln(), 0.0),
                    log: true,
                }
            }
            Dim::IntUniform { low, step, .. } => {
                let cells = dim.int_cells().unwrap();
                let obs: Vec<f64> = values
                    .iter()
                    .filter_map(|v| v.as_i64())
                    .map(|x| ((x - low) / step) as f64)
                    .collect();
                Estimator::Int {
                    parzen: Parzen::fit(&obs, 0.0, (cells - 1) as f64, 0.5),
                    low: *low,
                    step: *step,
                }
            }
            Dim::ZeroOr { inner } => {
                let n = values.len() as f64;
                let nonzero: Vec<&Value> = values.iter().copied().filter(|v| numeric(v) != 0.0).collect();
                let n_zero = n - nonzero.len() as f64;
                Estimator::ZeroOr {
                    p_zero: (n_zero + ZERO_OR_PRIOR) / (n + 1.0),
                    inner: Box::new(Estimator::fit(inner, &nonzero)),
                }
            }
            Dim::Categorical { values: cats } => {
                let c = cats.len() as f64;
                let n = values.len() as f64;
                let probs = cats
                    .iter()
                    .map(|cat| (values.iter().filter(|v| **v == cat).count() as f64 + 1.0 / c) / (n + 1.0))
                    .collect();
                Estimator::Categorical { probs }
            }
        }
    }

    fn log_density(&self, v: &Value, dim: &Dim) -> f64 {
        match (self, dim) {
            (Estimator::Fixed, _) => 0.0,
            (Estimator::Continuous { parzen, log }, _) => {
                let x = numeric(v);
                parzen.density(if *log { x.ln() } else { x }).max(1e-300).ln()
            }
            (Estimator::Int { parzen, low, step }, _) => {
                let k = ((v.as_i64().unwrap_or(*low) - low) / step) as f64;
                parzen.cell(k).max(1e-300).ln()
            }
            (Estimator::ZeroOr { p_zero, inner }, Dim::ZeroOr { inner: d }) => {
                if numeric(v) == 0.0 {
                    p_zero.ln()
                } else {
                    (1.0 - p_zero).ln() + inner.log_density(v, d)
                }
            }
            (Estimator::Categorical { probs }, Dim::Categorical { values }) => {
                let i = values.iter().position(|c| c == v).unwrap_or(0);
                probs[i].ln()
            }
            _ => 0.0,
        }
    }

    fn sample(&self, dim: &Dim, rng: &mut RngStream) -> Value {
        match (self, dim) {
            (Estimator::Fixed, _) => dim.sample_prior(rng),
            (Estimator::Continuous { parzen, log }, Dim::Uniform { low, high } | Dim::LogUniform { low, high }) => {
                let x = parzen.sample(rng, parzen.low, parzen.high);
                let x = if *log { x.exp() } else { x };
                Value::from(x.clamp(*low, *high))
            }
            (Estimator::Int { parzen, low, step }, _) => {
                let k = parzen.sample(rng, parzen.low - 0.5, parzen.high + 0.5).round();
                let k = k.clamp(parzen.low, parzen.high) as i64;
                Value::from(low + k * step)
            }
            (Estimator::ZeroOr { p_zero, inner }, Dim::ZeroOr { inner: d }) => {
                if rng.uniform() < *p_zero {
                    Value::from(0.0)
                } else {
                    inner.sample(d, rng)
                }
            }
            (Estimator::Categorical { probs }, Dim::Categorical { values }) => {
                let u = rng.uniform();
                let mut acc = 0.0;
                for (p, v) in probs.iter().zip(values) {
                    acc += p;
                    if u < acc {
                        return v.clone();
                    }
                }
                values.last().unwrap().clone()
            }
            _ => dim.sample_prior(rng),
        }
    }
}

/// Split finished trials into good and bad index sets. Failed trials are
/// always bad; ties in objective go to the earlier trial.
pub fn split_good_bad(history: &[Observation<'_>]) -> (Vec<usize>, Vec<usize>) {
    let mut ok: Vec<(usize, f64)> = history
        .iter()
        .enumerate()
        .filter_map(|(i, (_, o))| o.filter(|v| v.is_finite()).map(|v| (i, v)))
        .collect();
    ok.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    let n_good = ((TPE_GAMMA * history.len() as f64).ceil() as usize).clamp(1, ok.len().max(1)).min(ok.len());
    let good: Vec<usize> = ok[..n_good].iter().map(|x| x.0).collect();
    let bad = (0..history.len()).filter(|i| !good.contains(i)).collect();
    (good, bad)
}

/// Next configuration to try. Uniform from the prior during the startup
/// phase; afterwards the best of several draws from the good density by
/// good/bad density ratio.
pub fn sample(space: &SearchSpace, history: &[Observation<'_>], rng: &mut RngStream) -> Config {
    if history.len() < TPE_STARTUP {
        return space.sample_prior(rng);
    }
    let (good, bad) = split_good_bad(history);
    if good.is_empty() {
        return space.sample_prior(rng);
    }
    let models: Vec<(&String, &Dim, Estimator, Estimator)> = space
        .dims
        .iter()
        .map(|(name, dim)| {
            let pick = |idx: &[usize]| -> Vec<&Value> { idx.iter().filter_map(|&i| history[i].0.get(name)).collect() };
            (name, dim, Estimator::fit(dim, &pick(&good)), Estimator::fit(dim, &pick(&bad)))
        })
        .collect();
    let mut best: Option<(f64, Config)> = None;
    for _ in 0..TPE_CANDIDATES {
        let mut cand = Config::new();
        let mut score = 0.0;
        for (name, dim, l, g) in &models {
            let v = l.sample(dim, rng);
            score += l.log_density(&v, dim) - g.log_density(&v, dim);
            cand.insert((*name).clone(), v);
        }
        if best.as_ref().is_none_or(|(s, _)| score > *s) {
            best = Some((score, cand));
        }
    }
    best.expect("at least one candidate").1
}
