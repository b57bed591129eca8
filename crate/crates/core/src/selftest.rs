//! Built-in oracle checks: finite-difference gradients, Newton–Schulz
//! orthogonality and Welch reference values.

use crate::data::{make_synthetic, EncodedDataset, EncodedSplit, SyntheticKind};
use crate::error::Result;
use crate::ema::EmaTracker;
use crate::error::Error;
use crate::model::{Mode, ModelConfig, Network};
use crate::nn::{GradSet, ParamGroup, ParamRole, ParamSet, Precision, Tensor};
use crate::optim::linalg::{newton_schulz_orthogonalize, symmetric_eigen};
use crate::optim::{method_ids, parse_method, Optimizer, OptimizerSpec, Rule};
use crate::rng::RngStream;
use crate::stats::welch_test;

pub const FD_STEP: f64 = 1e-5;
pub const FD_TOLERANCE: f64 = 1e-4;
/// Denominator floor for the relative error of tiny gradient entries.
pub const FD_FLOOR: f64 = 1e-6;

/// Welch reference sample pair with its t statistic, degrees of freedom and
/// two-sided p-value from 40-digit adaptive quadrature of the t density.
pub const WELCH_A: [f64; 10] = [2.1, 2.0, 1.9, 2.2, 2.0, 2.1, 1.8, 2.0, 2.1, 1.9];
pub const WELCH_B: [f64; 10] = [1.8, 1.9, 1.7, 1.8, 2.0, 1.9, 1.8, 1.7, 1.9, 1.8];
pub const WELCH_T: f64 = 3.726_354_020_448_712_8;
pub const WELCH_DF: f64 = 17.106_283_941_039_566;
pub const WELCH_P: f64 = 0.001_663_674_199_169_452;

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    fn new(name: &str, passed: bool, detail: String) -> Self {
        Self {
            name: name.into(),
            passed,
            detail,
        }
    }
}

/// Outcome of a finite-difference gradient check.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheck {
    pub max_rel_error: f64,
    pub checked: usize,
    /// Entries whose stencil flips a ReLU, where the loss is not differentiable.
    pub skipped_at_kinks: usize,
}

fn eval_loss(net: &Network, params: &ParamSet, batch: &EncodedSplit) -> Result<(f64, Vec<bool>)> {
    let trace = net.forward(params, batch, Mode::Eval)?;
    let pattern = trace.activation_pattern();
    Ok((net.loss(&trace.outputs, batch)?.0, pattern))
}

/// Largest relative error between analytic and central-difference gradients
/// over every parameter entry, in eval mode.
pub fn gradient_check(net: &Network, params: &ParamSet, batch: &EncodedSplit, h: f64) -> Result<GradCheck> {
    let (_, grads) = net.loss_and_grad(params, batch, None)?;
    let (_, base_pattern) = eval_loss(net, params, batch)?;
    let mut p = params.clone();
    let names: Vec<String> = params.names().map(str::to_string).collect();
    let mut out = GradCheck {
        max_rel_error: 0.0,
        checked: 0,
        skipped_at_kinks: 0,
    };
    for name in &names {
        let analytic = grads.get(name).expect("gradient for every parameter").clone();
        for i in 0..analytic.numel() {
            let orig = p.tensor(name).data()[i];
            p.get_mut(name).expect("known name").value.data_mut()[i] = orig + h;
            let (up, up_pattern) = eval_loss(net, &p, batch)?;
            p.get_mut(name).expect("known name").value.data_mut()[i] = orig - h;
            let (down, down_pattern) = eval_loss(net, &p, batch)?;
            p.get_mut(name).expect("known name").value.data_mut()[i] = orig;
            if up_pattern != base_pattern || down_pattern != base_pattern {
                out.skipped_at_kinks += 1;
                continue;
            }
            let numeric = (up - down) / (2.0 * h);
            let a = analytic.data()[i];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(FD_FLOOR);
            out.max_rel_error = out.max_rel_error.max(rel);
            out.checked += 1;
        }
    }
    Ok(out)
}

/// Small gradient-check configurations: plain, embedded and packed.
pub fn gradient_check_models() -> [ModelConfig; 3] {
    [
        ModelConfig::Mlp {
            n_layers: 2,
            width: 32,
            dropout: 0.0,
        },
        ModelConfig::MlpPle {
            n_layers: 2,
            width: 32,
            dropout: 0.0,
            n_bins: 8,
            d_embedding: 4,
        },
        ModelConfig::TabmPacked {
            k: 3,
            n_layers: 2,
            width: 32,
            dropout: 0.0,
        },
    ]
}

/// Gradient check on a 16-row batch of a small synthetic dataset.
pub fn gradient_check_model(kind: SyntheticKind, model: &ModelConfig, seed: u64) -> Result<GradCheck> {
    let data = EncodedDataset::prepare(&make_synthetic(kind, 200, seed)?, seed)?;
    let net = Network::build(model, &data, Precision::F64)?;
    let params = net.init_params(seed)?;
    let idx: Vec<usize> = (0..16).collect();
    gradient_check(&net, &params, &data.train.select(&idx), FD_STEP)
}

/// `‖AᵀA − I‖_F` on the smaller Gram side of `a`.
pub fn orthogonality_error(a: &Tensor) -> f64 {
    let (r, c) = (a.rows(), a.cols());
    let n = r.min(c);
    let mut err = 0.0;
    for i in 0..n {
        for j in 0..n {
            let dot: f64 = if r >= c {
                (0..r).map(|k| a.get2(k, i) * a.get2(k, j)).sum()
            } else {
                (0..c).map(|k| a.get2(i, k) * a.get2(j, k)).sum()
            };
            let target = if i == j { 1.0 } else { 0.0 };
            err += (dot - target).powi(2);
        }
    }
    err.sqrt()
}

/// Polar factor `U Vᵀ = M (MᵀM)^{-1/2}` of a full-column-rank tall matrix.
pub fn polar_factor(m: &Tensor) -> Option<Tensor> {
    if m.rows() < m.cols() {
        return polar_factor(&m.transpose()).map(|t| t.transpose());
    }
    let c = m.cols();
    let mut gram = Tensor::zeros(&[c, c]);
    for i in 0..c {
        for j in 0..c {
            gram.set2(i, j, (0..m.rows()).map(|k| m.get2(k, i) * m.get2(k, j)).sum());
        }
    }
    let (vals, vecs) = symmetric_eigen(&gram)?;
    if vals.iter().any(|&v| v <= 0.0) {
        return None;
    }
    let mut inv_sqrt = Tensor::zeros(&[c, c]);
    for i in 0..c {
        for j in 0..c {
            inv_sqrt.set2(i, j, (0..c).map(|k| vecs.get2(i, k) * vecs.get2(j, k) / vals[k].sqrt()).sum());
        }
    }
    let mut out = Tensor::zeros(&[m.rows(), c]);
    for i in 0..m.rows() {
        for j in 0..c {
            out.set2(i, j, (0..c).map(|k| m.get2(i, k) * inv_sqrt.get2(k, j)).sum());
        }
    }
    Some(out)
}

pub fn cosine(a: &Tensor, b: &Tensor) -> f64 {
    a.dot(b) / (a.frobenius() * b.frobenius())
}

/// Random matrix with singular values spread over `[1, cond]`, built as a
/// product of random orthogonal factors around a diagonal.
pub fn well_conditioned(rows: usize, cols: usize, cond: f64, rng: &mut RngStream) -> Tensor {
    let gaussian = |r: usize, c: usize, rng: &mut RngStream| {
        let mut t = Tensor::zeros(&[r, c]);
        t.data_mut().iter_mut().for_each(|v| *v = rng.normal());
        t
    };
    let u = polar_factor(&gaussian(rows, rows, rng)).expect("gaussian square matrix is invertible");
    let v = polar_factor(&gaussian(cols, cols, rng)).expect("gaussian square matrix is invertible");
    let n = rows.min(cols);
    let mut out = Tensor::zeros(&[rows, cols]);
    for k in 0..n {
        let s = if n == 1 {
            1.0
        } else {
            1.0 + (cond - 1.0) * k as f64 / (n - 1) as f64
        };
        for i in 0..rows {
            for j in 0..cols {
                let x = out.get2(i, j) + s * u.get2(i, k) * v.get2(j, k);
                out.set2(i, j, x);
            }
        }
    }
    out
}

pub const CONVERGENCE_STEPS: usize = 500;
/// Required fractional reduction of `‖θ‖²/2`.
pub const CONVERGENCE_REDUCTION: f64 = 0.9;
pub const CONVERGENCE_EMA_DECAY: f64 = 0.9;

/// Starting point for the quadratic smoke test: a 4×4 hidden matrix and a
/// bias of four entries, every entry equal, with `‖θ₀‖ = 10`.
pub fn quadratic_start() -> ParamSet {
    let v = 10.0 / 20f64.sqrt();
    let mut p = ParamSet::new();
    p.insert("w", Tensor::full(&[4, 4], v), ParamRole::Matrix, ParamGroup::Orthogonal)
        .expect("valid parameter");
    p.insert("b", Tensor::full(&[4], v), ParamRole::Vector, ParamGroup::Adaptive)
        .expect("valid parameter");
    p
}

/// Fixture learning rate per method for the quadratic smoke test.
pub fn convergence_fixture(method: &str) -> Result<OptimizerSpec> {
    let (rule, ema) = parse_method(method)?;
    let lr = match rule {
        Rule::Sgd => 0.1,
        Rule::Lion | Rule::Signum => 0.01,
        _ => 0.05,
    };
    let mut spec = OptimizerSpec::new(rule, lr);
    if rule == Rule::Muon {
        spec.muon_lr = Some(0.05);
    }
    if ema {
        spec.ema_decay = Some(CONVERGENCE_EMA_DECAY);
    }
    Ok(spec)
}

/// `f(θ_T) / f(θ₀)` for `f = ‖θ‖²/2` after `steps` updates, measured on the
/// weights the method evaluates (EMA shadow or averaged iterate).
pub fn convergence_ratio(spec: &OptimizerSpec, steps: usize) -> Result<f64> {
    let mut params = quadratic_start();
    let f = |p: &ParamSet| p.iter().map(|(_, q)| q.value.sum_sq()).sum::<f64>() / 2.0;
    let f0 = f(&params);
    let mut opt = Optimizer::new(spec.clone())?;
    let mut ema = spec.ema_decay.map(|d| EmaTracker::new(d, &params)).transpose()?;
    for _ in 0..steps {
        let mut g = GradSet::new();
        for (name, p) in params.iter() {
            g.insert(name, p.value.clone());
        }
        opt.step(&mut params, &g)?;
        if let Some(t) = ema.as_mut() {
            t.update(&params)?;
        }
    }
    let eval = match &ema {
        Some(t) => t.eval_params().clone(),
        None => opt.eval_params(&params),
    };
    let ratio = f(&eval) / f0;
    if !ratio.is_finite() {
        return Err(Error::NonFinite(format!("{} quadratic smoke", spec.method_id())));
    }
    Ok(ratio)
}

fn convergence_checks() -> Vec<Check> {
    method_ids()
        .iter()
        .map(|m| {
            let name = format!("quadratic smoke {m}");
            match convergence_fixture(m).and_then(|s| convergence_ratio(&s, CONVERGENCE_STEPS)) {
                Ok(r) => Check::new(&name, r <= 1.0 - CONVERGENCE_REDUCTION, format!("f ratio {r:.3e}")),
                Err(e) => Check::new(&name, false, e.to_string()),
            }
        })
        .collect()
}

fn gradient_checks() -> Vec<Check> {
    gradient_check_models()
        .iter()
        .map(|m| {
            let name = format!("gradient check {}", m.kind());
            match gradient_check_model(SyntheticKind::TwoGaussians, m, 0) {
                Ok(g) => Check::new(
                    &name,
                    g.max_rel_error < FD_TOLERANCE && g.skipped_at_kinks * 100 < g.checked,
                    format!(
                        "max relative error {:.2e} over {} entries, {} at ReLU kinks",
                        g.max_rel_error, g.checked, g.skipped_at_kinks
                    ),
                ),
                Err(e) => Check::new(&name, false, e.to_string()),
            }
        })
        .collect()
}

fn newton_schulz_check() -> Check {
    let mut rng = RngStream::new(7).split("selftest-ns");
    let mut worst_orth = 0.0f64;
    let mut worst_cos = 1.0f64;
    for (r, c) in [(8, 8), (16, 4), (4, 16), (32, 16), (64, 32)] {
        let m = well_conditioned(r, c, 10.0, &mut rng);
        let out = match newton_schulz_orthogonalize(&m) {
            Ok(o) => o,
            Err(e) => return Check::new("newton-schulz orthogonality", false, e.to_string()),
        };
        worst_orth = worst_orth.max(orthogonality_error(&out));
        if let Some(p) = polar_factor(&m) {
            worst_cos = worst_cos.min(cosine(&out, &p));
        }
    }
    Check::new(
        "newton-schulz orthogonality",
        worst_orth < 0.3 && worst_cos > 0.99,
        format!("max ||OᵀO − I||_F {worst_orth:.3}, min cosine to polar factor {worst_cos:.4}"),
    )
}

fn welch_check() -> Check {
    match welch_test(&WELCH_A, &WELCH_B) {
        Ok(w) => {
            let err = (w.p - WELCH_P).abs().max((w.t - WELCH_T).abs()).max((w.df - WELCH_DF).abs());
            Check::new("welch reference values", err < 1e-6, format!("p {:.12}, max deviation {err:.1e}", w.p))
        }
        Err(e) => Check::new("welch reference values", false, e.to_string()),
    }
}

/// Run every built-in check.
pub fn run_selftest() -> Vec<Check> {
    let mut checks = gradient_checks();
    checks.extend(convergence_checks());
    checks.push(newton_schulz_check());
    checks.push(welch_check());
    checks
}
