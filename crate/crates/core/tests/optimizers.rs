use proptest::prelude::*;
use tabopt_core::ema::EmaTracker;
use tabopt_core::nn::{GradSet, ParamGroup, ParamRole, ParamSet, Tensor};
use tabopt_core::optim::{method_ids, Optimizer, OptimizerSpec, OptimizerState, Rule};
use tabopt_core::rng::RngStream;
use tabopt_core::selftest::{
    convergence_fixture, convergence_ratio, cosine, polar_factor, CONVERGENCE_REDUCTION, CONVERGENCE_STEPS,
};

fn single(value: Tensor, role: ParamRole, group: ParamGroup) -> ParamSet {
    let mut p = ParamSet::new();
    p.insert("p", value, role, group).unwrap();
    p
}

fn vector(values: &[f64]) -> ParamSet {
    single(Tensor::vector(values.to_vec()).unwrap(), ParamRole::Vector, ParamGroup::Adaptive)
}

fn matrix(t: Tensor) -> ParamSet {
    single(t, ParamRole::Matrix, ParamGroup::Orthogonal)
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

fn run(spec: &OptimizerSpec, params: &mut ParamSet, grads: &[Tensor]) -> Optimizer {
    let mut opt = Optimizer::new(spec.clone()).unwrap();
    for g in grads {
        let gs = grad(g.clone());
        opt.step(params, &gs).unwrap();
    }
    opt
}

fn value(params: &ParamSet) -> Vec<f64> {
    params.tensor("p").data().to_vec()
}

#[test]
fn adamw_first_step_on_a_scalar() {
    let mut p = vector(&[1.0]);
    run(&OptimizerSpec::new(Rule::Adamw, 0.1), &mut p, &[vgrad(&[1.0])]);
    assert!((value(&p)[0] - 0.9).abs() < 1e-7);
}

#[test]
fn adamw_decay_is_decoupled() {
    let mut p = vector(&[2.0]);
    let spec = OptimizerSpec::new(Rule::Adamw, 0.1).with_weight_decay(0.5);
    run(&spec, &mut p, &[vgrad(&[1.0])]);
    let expected = 2.0 * (1.0 - 0.1 * 0.5) - 0.1 / (1.0 + 1e-8);
    assert!((value(&p)[0] - expected).abs() < 1e-12);
}

#[test]
fn signum_moves_against_the_gradient_sign() {
    let mut p = vector(&[0.0]);
    run(&OptimizerSpec::new(Rule::Signum, 0.01), &mut p, &[vgrad(&[-3.0])]);
    assert!((value(&p)[0] - 0.01).abs() < 1e-15);
}

#[test]
fn lion_two_steps_by_hand() {
    let (b1, b2, lr) = (0.9, 0.99, 0.01);
    let mut p = vector(&[0.5, -0.5]);
    let g1 = [1.0, -2.0];
    let g2 = [-3.0, -0.1];
    run(&OptimizerSpec::new(Rule::Lion, lr), &mut p, &[vgrad(&g1), vgrad(&g2)]);
    let mut expected = [0.5, -0.5];
    for i in 0..2 {
        let m0 = 0.0;
        let c1 = b1 * m0 + (1.0 - b1) * g1[i];
        expected[i] -= lr * f64::signum(c1);
        let m1 = b2 * m0 + (1.0 - b2) * g1[i];
        let c2: f64 = b1 * m1 + (1.0 - b1) * g2[i];
        expected[i] -= lr * c2.signum();
    }
    for (a, e) in value(&p).iter().zip(expected) {
        assert!((a - e).abs() < 1e-10);
    }
}

#[test]
fn sgd_three_steps_by_hand() {
    let (lr, mu, damp, wd) = (0.1, 0.9, 0.9, 0.01);
    let mut p = vector(&[1.0]);
    let grads = [0.5, -0.25, 2.0];
    let spec = OptimizerSpec::new(Rule::Sgd, lr).with_weight_decay(wd);
    run(&spec, &mut p, &grads.map(|g| vgrad(&[g])));
    let (mut theta, mut buf) = (1.0, 0.0);
    for (k, g) in grads.iter().enumerate() {
        let d = g + wd * theta;
        buf = if k == 0 { d } else { mu * buf + (1.0 - damp) * d };
        theta -= lr * buf;
    }
    assert!((value(&p)[0] - theta).abs() < 1e-10);
}

#[test]
fn ema_three_steps_by_hand() {
    let mut p = vector(&[1.0]);
    let mut ema = EmaTracker::new(0.9, &p).unwrap();
    let mut opt = Optimizer::new(OptimizerSpec::new(Rule::Sgd, 0.1)).unwrap();
    let mut shadow = 1.0;
    for _ in 0..3 {
        let g = grad(vgrad(&[1.0]));
        opt.step(&mut p, &g).unwrap();
        ema.update(&p).unwrap();
        shadow = 0.9 * shadow + 0.1 * value(&p)[0];
    }
    assert!((ema.eval_params().tensor("p").data()[0] - shadow).abs() < 1e-10);
}

#[test]
fn radam_first_step_is_unnormalized_momentum() {
    let mut p = vector(&[1.0, 1.0]);
    run(&OptimizerSpec::new(Rule::Radam, 0.1), &mut p, &[vgrad(&[4.0, -0.5])]);
    let v = value(&p);
    assert!((v[0] - (1.0 - 0.4)).abs() < 1e-12);
    assert!((v[1] - (1.0 + 0.05)).abs() < 1e-12);
}

#[test]
fn ademamix_without_slow_momentum_is_adamw() {
    let mut rng = RngStream::new(3);
    let grads: Vec<Tensor> = (0..20).map(|_| random(&[6], &mut rng)).collect();
    let start = random(&[6], &mut rng);
    let mut a = single(start.clone(), ParamRole::Vector, ParamGroup::Adaptive);
    let mut b = a.clone();
    run(&OptimizerSpec::new(Rule::Adamw, 0.01).with_weight_decay(0.1), &mut a, &grads);
    let mut spec = OptimizerSpec::new(Rule::Ademamix, 0.01).with_weight_decay(0.1);
    spec.alpha = Some(0.0);
    run(&spec, &mut b, &grads);
    for (x, y) in value(&a).iter().zip(value(&b)) {
        assert!((x - y).abs() < 1e-12);
    }
}

#[test]
fn cautious_with_full_agreement_is_adamw() {
    // Gradients with a fixed sign pattern keep every coordinate.
    let grads: Vec<Tensor> = (0..10).map(|k| vgrad(&[1.0 + k as f64, -2.0, 0.5])).collect();
    let mut a = vector(&[0.0, 0.0, 0.0]);
    let mut b = a.clone();
    run(&OptimizerSpec::new(Rule::Adamw, 0.01), &mut a, &grads);
    run(&OptimizerSpec::new(Rule::CautiousAdamw, 0.01), &mut b, &grads);
    assert_eq!(value(&a), value(&b));
}

#[test]
fn cautious_only_moves_coordinates_agreeing_with_the_gradient() {
    let mut p = vector(&[0.0; 4]);
    let mut opt = run(&OptimizerSpec::new(Rule::CautiousAdamw, 0.01), &mut p, &[vgrad(&[1.0, 1.0, -1.0, -1.0])]);
    let before = value(&p);
    let g = grad(vgrad(&[-1e-3, 1.0, 1e-3, -1.0]));
    opt.step(&mut p, &g).unwrap();
    let after = value(&p);
    // Coordinates 0 and 2 keep momentum of the opposite sign and are frozen.
    assert_eq!(after[0], before[0]);
    assert_eq!(after[2], before[2]);
    assert!(after[1] < before[1] && after[3] > before[3]);
}

#[test]
fn soap_first_step_is_adamw() {
    let mut rng = RngStream::new(11);
    let start = random(&[5, 3], &mut rng);
    let g = random(&[5, 3], &mut rng);
    let mut a = matrix(start.clone());
    let mut b = matrix(start);
    run(&OptimizerSpec::new(Rule::Adamw, 0.01), &mut a, std::slice::from_ref(&g));
    run(&OptimizerSpec::new(Rule::Soap, 0.01), &mut b, &[g]);
    for (x, y) in value(&a).iter().zip(value(&b)) {
        assert!((x - y).abs() < 1e-10);
    }
}

#[test]
fn soap_on_a_one_by_one_matrix_is_adamw() {
    let grads: Vec<Tensor> = (0..25).map(|k| Tensor::new(vec![1, 1], vec![(k as f64).sin()]).unwrap()).collect();
    let start = Tensor::new(vec![1, 1], vec![0.3]).unwrap();
    let mut a = matrix(start.clone());
    let mut b = matrix(start);
    run(&OptimizerSpec::new(Rule::Adamw, 0.01), &mut a, &grads);
    run(&OptimizerSpec::new(Rule::Soap, 0.01), &mut b, &grads);
    assert!((value(&a)[0] - value(&b)[0]).abs() < 1e-10);
}

#[test]
fn soap_basis_concentrates_a_rank_one_gradient() {
    let mut rng = RngStream::new(5);
    let u = random(&[6, 1], &mut rng);
    let v = random(&[1, 4], &mut rng);
    let mut g = Tensor::zeros(&[6, 4]);
    for i in 0..6 {
        for j in 0..4 {
            g.set2(i, j, u.get2(i, 0) * v.get2(0, j));
        }
    }
    let mut p = matrix(Tensor::zeros(&[6, 4]));
    let spec = OptimizerSpec::new(Rule::Soap, 1e-3);
    let opt = run(&spec, &mut p, &vec![g.clone(); spec.refresh() as usize]);
    let ql = opt.state.buffer("p", "q_left").unwrap();
    let qr = opt.state.buffer("p", "q_right").unwrap();
    let mut rotated = Tensor::zeros(&[6, 4]);
    for a in 0..6 {
        for b in 0..4 {
            let mut s = 0.0;
            for i in 0..6 {
                for j in 0..4 {
                    s += ql.get2(i, a) * g.get2(i, j) * qr.get2(j, b);
                }
            }
            rotated.set2(a, b, s);
        }
    }
    let largest = rotated.data().iter().map(|x| x * x).fold(0.0, f64::max);
    assert!(largest / rotated.sum_sq() > 0.99);
}

#[test]
fn muon_sends_a_diagonal_gradient_to_the_identity() {
    let mut g = Tensor::zeros(&[2, 2]);
    g.set2(0, 0, 3.0);
    g.set2(1, 1, 1.0);
    let mut p = matrix(Tensor::zeros(&[2, 2]));
    let mut spec = OptimizerSpec::new(Rule::Muon, 1e-3);
    spec.muon_lr = Some(0.02);
    run(&spec, &mut p, &[g]);
    let expected = [-0.02, 0.0, 0.0, -0.02];
    for (a, e) in value(&p).iter().zip(expected) {
        assert!((a - e).abs() < 1e-2 * 0.02, "{a} vs {e}");
    }
}

#[test]
fn muon_second_step_follows_the_orthogonalized_momentum() {
    let mut rng = RngStream::new(8);
    let g1 = random(&[8, 4], &mut rng);
    let g2 = random(&[8, 4], &mut rng);
    let mut p = matrix(Tensor::zeros(&[8, 4]));
    let mut spec = OptimizerSpec::new(Rule::Muon, 1e-3);
    spec.muon_lr = Some(0.02);
    let mut opt = run(&spec, &mut p, std::slice::from_ref(&g1));
    let before = p.tensor("p").clone();
    opt.step(&mut p, &grad(g2.clone())).unwrap();
    let delta = p.tensor("p").sub(&before).unwrap();
    let momentum = g1.scale(0.95).add(&g2).unwrap();
    let polar = polar_factor(&momentum).unwrap();
    assert!(cosine(&delta, &polar.scale(-1.0)) > 0.99);
}

#[test]
fn muon_without_hidden_matrices_is_adamw() {
    let grads: Vec<Tensor> = (0..15).map(|k| vgrad(&[(k as f64).cos(), 0.5, -1.0])).collect();
    let mut a = vector(&[1.0, 2.0, 3.0]);
    let mut b = a.clone();
    run(&OptimizerSpec::new(Rule::Adamw, 0.01).with_weight_decay(0.1), &mut a, &grads);
    run(&OptimizerSpec::new(Rule::Muon, 0.01).with_weight_decay(0.1), &mut b, &grads);
    assert_eq!(value(&a), value(&b));
}

#[test]
fn schedule_free_average_equals_base_iterate_after_one_step() {
    let mut p = vector(&[1.0, -2.0]);
    let opt = run(&OptimizerSpec::new(Rule::ScheduleFreeAdamw, 0.1), &mut p, &[vgrad(&[0.3, 0.7])]);
    assert_eq!(opt.state.buffer("p", "x"), opt.state.buffer("p", "z"));
}

#[test]
fn schedule_free_average_is_no_worse_than_base_iterate() {
    let mut p = vector(&[3.0, -4.0, 1.0]);
    let mut opt = Optimizer::new(OptimizerSpec::new(Rule::ScheduleFreeAdamw, 0.05)).unwrap();
    for _ in 0..200 {
        let g = grad(p.tensor("p").clone());
        opt.step(&mut p, &g).unwrap();
    }
    let x = opt.state.buffer("p", "x").unwrap().sum_sq();
    let z = opt.state.buffer("p", "z").unwrap().sum_sq();
    assert!(x <= z * (1.0 + 1e-9) || x < 1e-12, "x {x} z {z}");
}

#[test]
fn every_method_converges_on_the_quadratic() {
    for method in method_ids() {
        let spec = convergence_fixture(&method).unwrap();
        let ratio = convergence_ratio(&spec, CONVERGENCE_STEPS).unwrap();
        assert!(ratio <= 1.0 - CONVERGENCE_REDUCTION, "{method}: {ratio}");
    }
}

#[test]
fn state_survives_a_json_round_trip_bitwise() {
    let mut rng = RngStream::new(2);
    let grads: Vec<Tensor> = (0..12).map(|_| random(&[4, 3], &mut rng)).collect();
    for rule in Rule::ALL {
        let start = random(&[4, 3], &mut rng);
        let spec = OptimizerSpec::new(rule, 1e-3).with_weight_decay(0.01);
        let mut a = matrix(start);
        let mut opt = run(&spec, &mut a, &grads[..6]);
        let restored = OptimizerState::from_json(&opt.state.to_json().unwrap()).unwrap();
        assert_eq!(restored, opt.state, "{rule}");
        let mut b = a.clone();
        let mut resumed = Optimizer {
            spec: spec.clone(),
            state: restored,
        };
        for g in &grads[6..] {
            opt.step(&mut a, &grad(g.clone())).unwrap();
            resumed.step(&mut b, &grad(g.clone())).unwrap();
        }
        assert_eq!(a, b, "{rule}");
    }
}

fn bounded_vec(len: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-10.0f64..10.0, len)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn zero_gradient_without_decay_leaves_weights_fixed(start in bounded_vec(5), rule_ix in 0usize..14) {
        let rule = Rule::ALL[rule_ix];
        let mut p = vector(&start);
        run(&OptimizerSpec::new(rule, 1e-2), &mut p, &vec![vgrad(&[0.0; 5]); 3]);
        for (a, s) in value(&p).iter().zip(&start) {
            prop_assert!((a - s).abs() <= 1e-12 * (1.0 + s.abs()), "{}: {} vs {}", rule, a, s);
        }
    }

    #[test]
    fn sign_rules_move_each_coordinate_by_exactly_lr(
        start in bounded_vec(5),
        g in prop::collection::vec(prop_oneof![-5.0f64..-1e-3, 1e-3f64..5.0], 5),
        lion in any::<bool>(),
    ) {
        let rule = if lion { Rule::Lion } else { Rule::Signum };
        let lr = 1e-2;
        let mut p = vector(&start);
        run(&OptimizerSpec::new(rule, lr), &mut p, &[vgrad(&g)]);
        for ((a, s), gi) in value(&p).iter().zip(&start).zip(&g) {
            prop_assert!(((s - a) - lr * gi.signum()).abs() < 1e-12);
        }
    }
}
