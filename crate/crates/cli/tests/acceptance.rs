//! Acceptance run: one PASS/FAIL line per criterion.
//!
//! Criteria 1 to 8 are asserted; the process exits nonzero if any fails.
//! Criterion 9 is a soft directional check and is only reported.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::{Duration, Instant};

use nalgebra::DMatrix;
use serde_json::Value;
use tabopt_core::data::{make_synthetic, EncodedDataset, Metric, SyntheticKind};
use tabopt_core::ema::EmaTracker;
use tabopt_core::model::{ModelConfig, Network};
use tabopt_core::nn::{GradSet, ParamGroup, ParamRole, ParamSet, Precision, Tensor};
use tabopt_core::optim::{method_ids, newton_schulz_orthogonalize, Optimizer, OptimizerSpec, Rule};
use tabopt_core::rng::RngStream;
use tabopt_core::selftest::{
    convergence_fixture, convergence_ratio, cosine, gradient_check_model, gradient_check_models,
    orthogonality_error, well_conditioned, CONVERGENCE_REDUCTION, CONVERGENCE_STEPS, FD_TOLERANCE,
};
use tabopt_core::stats::{delta_percent, tier_ranks, welch_test};
use tabopt_core::train::{train_loop, Evaluator, TrainConfig};

use common::{ok, p, DESK_SPACE};

const GRADIENT_BUDGET: Duration = Duration::from_secs(60);
const NEWTON_SCHULZ_BUDGET: Duration = Duration::from_secs(60);
const CONVERGENCE_BUDGET: Duration = Duration::from_secs(30);
const PIPELINE_BUDGET: Duration = Duration::from_secs(600);
const HAND_TOLERANCE: f64 = 1e-10;
const ADEMAMIX_TOLERANCE: f64 = 1e-12;
const ORTHOGONALITY_MAX: f64 = 0.3;
const SVD_COSINE_MIN: f64 = 0.99;
const SCALE_TOLERANCE: f64 = 1e-6;
const WELCH_TOLERANCE: f64 = 1e-6;
const ACCURACY_MIN: f64 = 0.95;
const MUON_MARGIN_PERCENT: f64 = -0.5;

/// Narrower space for the regression suite, whose trials run many epochs.
const SUITE_SPACE: &str = r#"{"model.n_layers": {"type": "int_uniform", "low": 1, "high": 2}, "model.width": {"type": "int_uniform", "low": 32, "high": 64, "step": 32}}"#;

type Verdict = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within_budget(start: Instant, budget: Duration) -> Result<f64, String> {
    let secs = start.elapsed().as_secs_f64();
    ensure(secs < budget.as_secs_f64(), || format!("took {secs:.1}s, budget {}s", budget.as_secs()))?;
    Ok(secs)
}

fn single(value: Tensor, role: ParamRole, group: ParamGroup) -> ParamSet {
    let mut p = ParamSet::new();
    p.insert("p", value, role, group).unwrap();
    p
}

fn vector(values: &[f64]) -> ParamSet {
    single(Tensor::vector(values.to_vec()).unwrap(), ParamRole::Vector, ParamGroup::Adaptive)
}

fn grad(g: Tensor) -> GradSet {
    let mut out = GradSet::new();
    out.insert("p", g);
    out
}

fn vgrad(values: &[f64]) -> Tensor {
    Tensor::vector(values.to_vec()).unwrap()
}

fn random(shape: &[usize], rng: &mut RngStream) -> Tensor {
    let mut t = Tensor::zeros(shape);
    t.data_mut().iter_mut().for_each(|v| *v = rng.normal());
    t
}

fn run(spec: &OptimizerSpec, params: &mut ParamSet, grads: &[Tensor]) {
    let mut opt = Optimizer::new(spec.clone()).unwrap();
    for g in grads {
        opt.step(params, &grad(g.clone())).unwrap();
    }
}

fn value(params: &ParamSet) -> Vec<f64> {
    params.tensor("p").data().to_vec()
}

fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn close(name: &str, got: &[f64], want: &[f64], tol: f64) -> Result<(), String> {
    let d = max_diff(got, want);
    ensure(d <= tol, || format!("{name}: max diff {d:e} > {tol:e}"))
}

fn criterion_1() -> Verdict {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    for kind in [SyntheticKind::TwoGaussians, SyntheticKind::Friedman] {
        for model in gradient_check_models() {
            let g = gradient_check_model(kind, &model, 1).map_err(|e| e.to_string())?;
            ensure(g.max_rel_error < FD_TOLERANCE, || {
                format!("{kind:?} {}: max rel error {:e}", model.kind(), g.max_rel_error)
            })?;
            worst = worst.max(g.max_rel_error);
        }
    }
    let secs = within_budget(start, GRADIENT_BUDGET)?;
    Ok(format!("max rel error {worst:.2e} < {FD_TOLERANCE:e} in {secs:.1}s"))
}

fn criterion_2() -> Verdict {
    let (lr, wd, eps) = (0.01, 0.1, 1e-8);
    let start = [1.0, -0.5];
    let g = [0.3, -2.0];

    let mut p = vector(&start);
    run(&OptimizerSpec::new(Rule::Adamw, lr).with_weight_decay(wd), &mut p, &[vgrad(&g)]);
    let want: Vec<f64> = (0..2).map(|i| start[i] * (1.0 - lr * wd) - lr * g[i] / (g[i].abs() + eps)).collect();
    close("adamw", &value(&p), &want, HAND_TOLERANCE)?;

    for rule in [Rule::Lion, Rule::Signum] {
        let mut p = vector(&start);
        run(&OptimizerSpec::new(rule, lr), &mut p, &[vgrad(&g)]);
        let want: Vec<f64> = (0..2).map(|i| start[i] - lr * g[i].signum()).collect();
        close(&rule.to_string(), &value(&p), &want, HAND_TOLERANCE)?;
    }

    let mut p = vector(&start);
    run(&OptimizerSpec::new(Rule::Sgd, lr).with_weight_decay(wd), &mut p, &[vgrad(&g)]);
    let want: Vec<f64> = (0..2).map(|i| start[i] - lr * (g[i] + wd * start[i])).collect();
    close("sgd", &value(&p), &want, HAND_TOLERANCE)?;

    let decay = 0.9;
    let mut p = vector(&start);
    let mut ema = EmaTracker::new(decay, &p).map_err(|e| e.to_string())?;
    run(&OptimizerSpec::new(Rule::Sgd, lr), &mut p, &[vgrad(&g)]);
    ema.update(&p).map_err(|e| e.to_string())?;
    let live = value(&p);
    let want: Vec<f64> = (0..2).map(|i| decay * start[i] + (1.0 - decay) * live[i]).collect();
    close("ema", ema.eval_params().tensor("p").data(), &want, HAND_TOLERANCE)?;

    let mut rng = RngStream::new(0).split("collapse");
    let grads: Vec<Tensor> = (0..20).map(|k| vgrad(&[1.0 + k as f64, -2.0, 0.5])).collect();
    let (mut a, mut b) = (vector(&[0.0; 3]), vector(&[0.0; 3]));
    run(&OptimizerSpec::new(Rule::Adamw, lr), &mut a, &grads);
    run(&OptimizerSpec::new(Rule::CautiousAdamw, lr), &mut b, &grads);
    ensure(value(&a) == value(&b), || "cautious with a full mask differs from adamw".into())?;

    let grads: Vec<Tensor> = (0..20).map(|_| random(&[6], &mut rng)).collect();
    let init = random(&[6], &mut rng);
    let mut a = single(init.clone(), ParamRole::Vector, ParamGroup::Adaptive);
    let mut b = a.clone();
    run(&OptimizerSpec::new(Rule::Adamw, lr).with_weight_decay(wd), &mut a, &grads);
    let mut spec = OptimizerSpec::new(Rule::Ademamix, lr).with_weight_decay(wd);
    spec.alpha = Some(0.0);
    run(&spec, &mut b, &grads);
    close("ademamix alpha 0", &value(&b), &value(&a), ADEMAMIX_TOLERANCE)?;

    let init = random(&[5, 3], &mut rng);
    let g = random(&[5, 3], &mut rng);
    let mut a = single(init.clone(), ParamRole::Matrix, ParamGroup::Orthogonal);
    let mut b = a.clone();
    run(&OptimizerSpec::new(Rule::Adamw, lr), &mut a, std::slice::from_ref(&g));
    run(&OptimizerSpec::new(Rule::Soap, lr), &mut b, &[g]);
    close("soap identity basis", &value(&b), &value(&a), HAND_TOLERANCE)?;

    let data = EncodedDataset::prepare(&make_synthetic(SyntheticKind::TwoGaussians, 300, 5).unwrap(), 0).unwrap();
    let mlp = ModelConfig::Mlp {
        n_layers: 2,
        width: 32,
        dropout: 0.0,
    };
    let packed = ModelConfig::TabmPacked {
        k: 1,
        n_layers: 2,
        width: 32,
        dropout: 0.0,
    };
    let plain = Network::build(&mlp, &data, Precision::F64).unwrap();
    let one = Network::build(&packed, &data, Precision::F64).unwrap();
    let (p1, p2) = (plain.init_params(4).unwrap(), one.init_params(4).unwrap());
    ensure(p1 == p2, || "k=1 packed parameters differ from the mlp".into())?;
    ensure(plain.predict(&p1, &data.test).unwrap() == one.predict(&p2, &data.test).unwrap(), || {
        "k=1 packed predictions differ from the mlp".into()
    })?;

    Ok("adamw, lion, signum, sgd, ema by hand; cautious, ademamix, soap, k=1 collapses".into())
}

fn svd_polar(t: &Tensor) -> Tensor {
    let m = DMatrix::from_fn(t.rows(), t.cols(), |i, j| t.get2(i, j));
    let svd = m.svd(true, true);
    let uv = svd.u.unwrap() * svd.v_t.unwrap();
    let mut out = Tensor::zeros(&[uv.nrows(), uv.ncols()]);
    for i in 0..uv.nrows() {
        for j in 0..uv.ncols() {
            out.set2(i, j, uv[(i, j)]);
        }
    }
    out
}

fn criterion_3() -> Verdict {
    let start = Instant::now();
    let mut rng = RngStream::new(0).split("newton_schulz");
    let (mut worst_err, mut worst_cos): (f64, f64) = (0.0, 1.0);
    for case in 0..100 {
        let (rows, cols) = (1 + rng.below(64), 1 + rng.below(32));
        let m = well_conditioned(rows, cols, 10.0, &mut rng);
        let o = newton_schulz_orthogonalize(&m).map_err(|e| e.to_string())?;
        let err = orthogonality_error(&o);
        let cos = cosine(&o, &svd_polar(&m));
        ensure(err < ORTHOGONALITY_MAX && cos > SVD_COSINE_MIN, || {
            format!("case {case} {rows}x{cols}: orthogonality error {err:.3}, cosine {cos:.4}")
        })?;
        worst_err = worst_err.max(err);
        worst_cos = worst_cos.min(cos);
        let base = newton_schulz_orthogonalize(&m).unwrap();
        for lambda in [0.1, 10.0] {
            let scaled = newton_schulz_orthogonalize(&m.scale(lambda)).unwrap();
            close(&format!("case {case} scale {lambda}"), scaled.data(), base.data(), SCALE_TOLERANCE)?;
        }
    }
    let secs = within_budget(start, NEWTON_SCHULZ_BUDGET)?;
    Ok(format!("worst orthogonality error {worst_err:.3}, worst cosine {worst_cos:.4}, {secs:.1}s"))
}

fn criterion_4() -> Verdict {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    let methods = method_ids();
    for method in &methods {
        let spec = convergence_fixture(method).map_err(|e| e.to_string())?;
        let ratio = convergence_ratio(&spec, CONVERGENCE_STEPS).map_err(|e| e.to_string())?;
        ensure(ratio <= 1.0 - CONVERGENCE_REDUCTION, || format!("{method}: loss ratio {ratio:.3}"))?;
        worst = worst.max(ratio);
    }
    let secs = within_budget(start, CONVERGENCE_BUDGET)?;
    Ok(format!("{} methods, worst loss ratio {worst:.2e} in {CONVERGENCE_STEPS} steps, {secs:.1}s", methods.len()))
}

fn adaptive_simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64, depth: u32) -> f64 {
    let simpson = |a: f64, b: f64| (b - a) / 6.0 * (f(a) + 4.0 * f(0.5 * (a + b)) + f(b));
    let m = 0.5 * (a + b);
    let (whole, left, right) = (simpson(a, b), simpson(a, m), simpson(m, b));
    let diff = left + right - whole;
    if depth == 0 || diff.abs() <= 15.0 * tol {
        return left + right + diff / 15.0;
    }
    adaptive_simpson(f, a, m, tol / 2.0, depth - 1) + adaptive_simpson(f, m, b, tol / 2.0, depth - 1)
}

/// Two-sided Student-t tail; with `x = √ν tan θ` the density is
/// proportional to `cos^{ν−1} θ` on `[0, π/2)`.
fn t_tail_by_quadrature(t: f64, df: f64) -> f64 {
    let f = move |theta: f64| theta.cos().max(0.0).powf(df - 1.0);
    let half_pi = std::f64::consts::FRAC_PI_2;
    let theta_t = (t.abs() / df.sqrt()).atan();
    adaptive_simpson(&f, theta_t, half_pi, 1e-13, 40) / adaptive_simpson(&f, 0.0, half_pi, 1e-13, 40)
}

fn criterion_5() -> Verdict {
    let mut rng = RngStream::new(0).split("welch");
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let (na, nb) = (3 + rng.below(13), 3 + rng.below(13));
        let (sa, sb) = (rng.uniform_range(0.01, 2.0), rng.uniform_range(0.01, 2.0));
        let shift = rng.uniform_range(-1.5, 1.5);
        let a: Vec<f64> = (0..na).map(|_| shift + sa * rng.normal()).collect();
        let b: Vec<f64> = (0..nb).map(|_| sb * rng.normal()).collect();
        let w = welch_test(&a, &b).map_err(|e| e.to_string())?;
        worst = worst.max((w.p - t_tail_by_quadrature(w.t, w.df)).abs());
    }
    ensure(worst < WELCH_TOLERANCE, || format!("welch max |p - oracle| {worst:e}"))?;

    let ranks = tier_ranks(&[(0.90, 0.01), (0.895, 0.02), (0.85, 0.01)]).map_err(|e| e.to_string())?;
    ensure(ranks == vec![1, 1, 2], || format!("hand example ranks {ranks:?}"))?;

    let mut rng = RngStream::new(0).split("tiers");
    for case in 0..1000 {
        let n = 1 + rng.below(8);
        let mut entries: Vec<(f64, f64)> = (0..n).map(|_| (rng.uniform(), rng.uniform_range(0.0, 0.1))).collect();
        let before = tier_ranks(&entries).unwrap();
        let floor = entries.iter().map(|(m, s)| m - s).fold(f64::INFINITY, f64::min);
        entries.push((floor - rng.uniform_range(1e-6, 1.0), rng.uniform_range(0.0, 0.1)));
        let after = tier_ranks(&entries).unwrap();
        ensure(after[..n] == before[..], || format!("instance {case}: {before:?} became {after:?}"))?;
    }

    let delta = delta_percent(0.808, 0.800).ok_or("delta undefined")?;
    let shown = format!("{delta:+.2}");
    ensure(shown == "+1.00", || format!("delta shows {shown}"))?;
    Ok(format!("welch worst {worst:.1e}; tiers [1, 1, 2]; 1000 dominated instances; delta {shown}"))
}

/// Validation scores follow a fixed script; test calls are counted.
struct Scripted {
    scores: Vec<f64>,
    calls: usize,
    test_calls: usize,
}

impl Evaluator for Scripted {
    fn metric(&self) -> Metric {
        Metric::Accuracy
    }

    fn validation(&mut self, _: &Network, _: &ParamSet) -> tabopt_core::error::Result<f64> {
        let s = self.scores[self.calls.min(self.scores.len() - 1)];
        self.calls += 1;
        Ok(s)
    }

    fn test(&mut self, _: &Network, _: &ParamSet) -> tabopt_core::error::Result<f64> {
        self.test_calls += 1;
        Ok(0.5)
    }
}

fn criterion_7() -> Verdict {
    let data = EncodedDataset::prepare(&make_synthetic(SyntheticKind::TwoGaussians, 200, 0).unwrap(), 0).unwrap();
    let model = ModelConfig::Mlp {
        n_layers: 1,
        width: 16,
        dropout: 0.0,
    };
    let net = Network::build(&model, &data, Precision::F64).unwrap();
    let mut eval = Scripted {
        scores: (1..=200).map(|e| 1.0 - ((e as f64) - 30.0).abs() / 100.0).collect(),
        calls: 0,
        test_calls: 0,
    };
    let cfg = TrainConfig::default();
    ensure(cfg.patience == 16, || format!("patience {}", cfg.patience))?;
    let spec = OptimizerSpec::new(Rule::Adamw, 1e-3);
    let out = train_loop(&net, &data.train, &spec, &cfg, 64, &mut eval).map_err(|e| e.to_string())?;
    ensure(out.best_epoch == 30 && out.epochs_run == 46 && eval.test_calls == 1, || {
        format!(
            "best_epoch {}, epochs_run {}, test calls {}",
            out.best_epoch, out.epochs_run, eval.test_calls
        )
    })?;
    Ok("best_epoch 30, epochs_run 46, patience 16".into())
}

fn read_runs(path: &Path) -> Vec<Value> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn method_summary<'a>(agg: &'a Value, method: &str) -> &'a Value {
    agg["methods"]
        .as_array()
        .unwrap()
        .iter()
        .find(|m| m["method"] == method)
        .unwrap_or_else(|| panic!("{method} missing from aggregate"))
}

fn criterion_6() -> Verdict {
    let start = Instant::now();
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    let out = tmp.path().join("out");
    ok(&[
        "gen-data", "--kind", "two_gaussians", "--n", "2000", "--separation", "6", "--out", p(&data),
    ]);
    let optimizers = ["adamw", "muon", "adamw_ema"];
    for opt in optimizers {
        ok(&[
            "tune", "--data", p(&data), "--model", "mlp", "--optimizer", opt, "--budget", "20", "--space", DESK_SPACE,
            "--workers", "1", "--out", p(&out),
        ]);
        ok(&[
            "train", "--data", p(&data), "--model", "mlp", "--optimizer", opt, "--seeds", "0..9", "--workers", "1",
            "--out", p(&out),
        ]);
    }
    ok(&["aggregate", "--runs", p(&out)]);
    let secs = within_budget(start, PIPELINE_BUDGET)?;

    let mut accs = Vec::new();
    for opt in optimizers {
        let runs = read_runs(&out.join("two_gaussians").join(format!("mlp__{opt}")).join("runs.jsonl"));
        ensure(runs.len() == 10, || format!("{opt}: {} runs", runs.len()))?;
        let scores: Vec<f64> = runs.iter().filter_map(|r| r["test_score_at_best"].as_f64()).collect();
        ensure(scores.len() == 10, || format!("{opt}: failed runs"))?;
        let mean = scores.iter().sum::<f64>() / 10.0;
        ensure(mean > ACCURACY_MIN, || format!("{opt}: mean accuracy {mean:.4}"))?;
        accs.push(format!("{opt} {mean:.4}"));
    }

    let agg = read_json(&out.join("aggregate.json"));
    let n_datasets = agg["datasets"].as_array().unwrap().len();
    for opt in optimizers {
        let m = method_summary(&agg, &format!("mlp:{opt}"));
        let wtl = ["wins", "ties", "losses"].iter().map(|k| m[k].as_u64().unwrap()).sum::<u64>();
        ensure(wtl as usize == n_datasets, || format!("{opt}: W+T+L {wtl} vs {n_datasets} datasets"))?;
    }
    let md = std::fs::read_to_string(out.join("report.md")).unwrap();
    let base = md.lines().find(|l| l.starts_with("| mlp:adamw |")).ok_or("baseline row missing")?;
    ensure(base.starts_with("| mlp:adamw | 0.00 |"), || format!("baseline row {base}"))?;
    Ok(format!("{}; W+T+L = {n_datasets}; baseline 0.00; {secs:.0}s", accs.join(", ")))
}

fn criterion_8() -> Verdict {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    ok(&["gen-data", "--kind", "friedman", "--n", "600", "--out", p(&data)]);
    let methods = [("mlp", "muon"), ("mlp_ple", "adamw_ema")];
    let logs: Vec<Vec<Vec<u8>>> = ["a", "b"]
        .iter()
        .map(|run| {
            let out = tmp.path().join(run);
            methods
                .iter()
                .map(|(model, opt)| {
                    let common = [
                        "--data", p(&data), "--model", model, "--optimizer", opt, "--workers", "1", "--max-epochs",
                        "20", "--out", p(&out),
                    ];
                    let mut tune = vec!["tune", "--budget", "3", "--space", DESK_SPACE];
                    tune.extend(common);
                    ok(&tune);
                    let mut train = vec!["train", "--seeds", "0..2"];
                    train.extend(common);
                    ok(&train);
                    std::fs::read(out.join("friedman").join(format!("{model}__{opt}")).join("runs.jsonl")).unwrap()
                })
                .collect()
        })
        .collect();
    for (i, (model, opt)) in methods.iter().enumerate() {
        ensure(!logs[0][i].is_empty(), || format!("{model}:{opt}: empty runs.jsonl"))?;
        ensure(logs[0][i] == logs[1][i], || format!("{model}:{opt}: runs.jsonl differs between executions"))?;
    }
    Ok("tune then train twice: runs.jsonl identical for mlp:muon and mlp_ple:adamw_ema".into())
}

fn criterion_9() -> Verdict {
    let start = Instant::now();
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    for noise in ["0.5", "1.0", "2.0"] {
        for seed in ["0", "1", "2"] {
            let name = format!("friedman_noise{noise}_data{seed}");
            let data = tmp.path().join(&name);
            ok(&[
                "gen-data", "--kind", "friedman", "--n", "1000", "--noise", noise, "--seed", seed, "--name", &name,
                "--out", p(&data),
            ]);
            for opt in ["adamw", "muon"] {
                let common = [
                    "--data", p(&data), "--model", "mlp", "--optimizer", opt, "--workers", "1", "--max-epochs", "400",
                    "--out", p(&out),
                ];
                let mut tune = vec!["tune", "--budget", "10", "--space", SUITE_SPACE];
                tune.extend(common);
                ok(&tune);
                let mut train = vec!["train", "--seeds", "0..4"];
                train.extend(common);
                ok(&train);
            }
        }
    }
    ok(&["aggregate", "--runs", p(&out), "--min-seeds", "5"]);
    let agg = read_json(&out.join("aggregate.json"));
    let n = agg["datasets"].as_array().unwrap().len();
    ensure(n == 9, || format!("{n} datasets aggregated"))?;
    let muon = method_summary(&agg, "mlp:muon");
    let delta = muon["delta_score"].as_f64().ok_or("muon delta undefined")?;
    let (w, t, l) = (muon["wins"].as_u64().unwrap(), muon["ties"].as_u64().unwrap(), muon["losses"].as_u64().unwrap());
    let secs = start.elapsed().as_secs_f64();
    let detail = format!("muon delta vs adamw {delta:+.2}% (threshold {MUON_MARGIN_PERCENT:+.1}%), W/T/L {w}/{t}/{l}, {secs:.0}s");
    if delta >= MUON_MARGIN_PERCENT {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn judge(n: usize, f: fn() -> Verdict) -> bool {
    let verdict = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
        let msg = e
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_else(|| "panicked".into());
        Err(msg)
    });
    let soft = if n == 9 { " (soft, not asserted)" } else { "" };
    match &verdict {
        Ok(d) => println!("criterion {n}: PASS{soft} {d}"),
        Err(d) => println!("criterion {n}: FAIL{soft} {d}"),
    }
    verdict.is_ok()
}

fn main() {
    let criteria: [fn() -> Verdict; 9] = [
        criterion_1,
        criterion_2,
        criterion_3,
        criterion_4,
        criterion_5,
        criterion_6,
        criterion_7,
        criterion_8,
        criterion_9,
    ];
    let mut hard_failures = 0;
    for (i, f) in criteria.into_iter().enumerate() {
        if !judge(i + 1, f) && i + 1 != 9 {
            hard_failures += 1;
        }
    }
    if hard_failures > 0 {
        println!("{hard_failures} asserted criteria failed");
        std::process::exit(1);
    }
}
