//! Score aggregation: unified scores, relative improvement, tiered ranks,
//! Welch win/tie/loss and time overheads.

pub mod report;

use serde::{Deserialize, Serialize};
use statrs::function::beta::beta_reg;

pub use report::{aggregate, emit_report, load_results, method_id, render_report, REPORT_FILES, AggregateOptions, AggregateReport, DatasetRow, LoadedResults, MethodScores, MethodSummary};

use crate::data::Metric;
use crate::error::{Error, Result};

/// Map a reported metric value to a higher-is-better score comparable
/// across tasks: classification passes through, RMSE becomes
/// `R² = 1 − (RMSE/σ)²`.
pub fn to_unified_score(metric: Metric, value: f64, test_label_std: f64) -> Result<f64> {
    match metric {
        Metric::Accuracy | Metric::RocAuc => Ok(value),
        Metric::Rmse => {
            if test_label_std.is_nan() || test_label_std <= 0.0 {
                return Err(Error::Undefined("R² needs a positive test label deviation".into()));
            }
            Ok(1.0 - (value / test_label_std).powi(2))
        }
    }
}

/// Relative improvement in percent, `None` when the baseline is not positive.
pub fn delta_percent(score: f64, baseline: f64) -> Option<f64> {
    (baseline > 0.0).then(|| 100.0 * (score / baseline - 1.0))
}

/// Mean relative improvement over datasets whose baseline is positive.
/// `pairs` holds (method score, baseline score) per dataset.
pub fn delta_score(pairs: &[(f64, f64)]) -> Option<f64> {
    let d: Vec<f64> = pairs.iter().filter_map(|&(s, b)| delta_percent(s, b)).collect();
    (!d.is_empty()).then(|| d.iter().sum::<f64>() / d.len() as f64)
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample variance (n − 1 denominator); zero for fewer than two values.
pub fn sample_variance(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64
}

pub fn sample_sd(xs: &[f64]) -> f64 {
    sample_variance(xs).sqrt()
}

/// Tiered ranks for methods given as (mean, sd), returned in input order.
///
/// Methods are visited by decreasing mean. The first one is the reference
/// with rank 1; a method keeps the current rank unless the reference's
/// mean minus its sd exceeds the method's mean, in which case it opens the
/// next rank and becomes the reference.
pub fn tier_ranks(entries: &[(f64, f64)]) -> Result<Vec<usize>> {
    if entries.is_empty() {
        return Err(Error::Undefined("no methods to rank".into()));
    }
    let mut order: Vec<usize> = (0..entries.len()).collect();
    order.sort_by(|&a, &b| entries[b].0.total_cmp(&entries[a].0).then(a.cmp(&b)));
    let mut ranks = vec![0; entries.len()];
    let mut rank = 1;
    let mut reference = entries[order[0]];
    for &i in &order {
        let (mu, _) = entries[i];
        if reference.0 - reference.1 > mu {
            rank += 1;
            reference = entries[i];
        }
        ranks[i] = rank;
    }
    Ok(ranks)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Outcome {
    Win,
    Tie,
    Loss,
}

impl Outcome {
    pub fn flip(self) -> Self {
        match self {
            Outcome::Win => Outcome::Loss,
            Outcome::Tie => Outcome::Tie,
            Outcome::Loss => Outcome::Win,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WelchTest {
    pub t: f64,
    pub df: f64,
    /// Two-sided p-value.
    pub p: f64,
    pub mean_a: f64,
    pub mean_b: f64,
}

/// Two-sided `P(|T| ≥ |t|)` for Student's t with `df` degrees of freedom.
pub fn t_two_sided_p(t: f64, df: f64) -> f64 {
    if t == 0.0 {
        return 1.0;
    }
    beta_reg(df / 2.0, 0.5, df / (df + t * t))
}

/// Welch's unequal-variance t-test.
pub fn welch_test(a: &[f64], b: &[f64]) -> Result<WelchTest> {
    if a.len() < 2 || b.len() < 2 {
        return Err(Error::Undefined("Welch test needs at least two samples per side".into()));
    }
    if a.iter().chain(b).any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("Welch sample".into()));
    }
    let (ma, mb) = (mean(a), mean(b));
    let va = sample_variance(a) / a.len() as f64;
    let vb = sample_variance(b) / b.len() as f64;
    let se2 = va + vb;
    if se2 == 0.0 {
        let p = if ma == mb { 1.0 } else { 0.0 };
        let t = if ma == mb {
            0.0
        } else {
            f64::INFINITY.copysign(ma - mb)
        };
        return Ok(WelchTest {
            t,
            df: f64::INFINITY,
            p,
            mean_a: ma,
            mean_b: mb,
        });
    }
    let t = (ma - mb) / se2.sqrt();
    let df = se2 * se2 / (va * va / (a.len() - 1) as f64 + vb * vb / (b.len() - 1) as f64);
    Ok(WelchTest {
        t,
        df,
        p: t_two_sided_p(t, df),
        mean_a: ma,
        mean_b: mb,
    })
}

/// Win/tie/loss of `a` against `b` at significance level `alpha`.
pub fn welch_wtl(a: &[f64], b: &[f64], alpha: f64) -> Result<Outcome> {
    let w = welch_test(a, b)?;
    Ok(if w.p < alpha && w.mean_a > w.mean_b {
        Outcome::Win
    } else if w.p < alpha && w.mean_a < w.mean_b {
        Outcome::Loss
    } else {
        Outcome::Tie
    })
}

/// Mean over datasets of the method/baseline time ratio. `pairs` holds
/// (method time, baseline time) per dataset.
pub fn time_overhead(pairs: &[(f64, f64)]) -> Option<f64> {
    let r: Vec<f64> = pairs.iter().filter(|(_, b)| *b > 0.0).map(|(m, b)| m / b).collect();
    (!r.is_empty()).then(|| mean(&r))
}

/// Percentile `q ∈ [0, 100]` by linear interpolation between closest ranks.
pub fn percentile(values: &[f64], q: f64) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let h = (v.len() - 1) as f64 * q / 100.0;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    Some(v[lo] + (h - lo as f64) * (v[hi] - v[lo]))
}
