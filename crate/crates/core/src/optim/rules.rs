use std::collections::BTreeMap;

use super::linalg::{newton_schulz_orthogonalize, symmetric_eigen};
use super::{OptimizerSpec, Rule};
use crate::constants::{ADAN_BETAS, ADEMAMIX_BETA3, ADOPT_BETA2, CAUTIOUS_MIN_MEAN, MUON_MOMENTUM};
use crate::error::Result;
use crate::nn::{matmul, matmul_nt, matmul_tn, Param, ParamGroup, ParamRole, Precision, Tensor};

type Buffers = BTreeMap<String, Tensor>;

/// Remove buffer `key`, creating it from `init` if absent.
fn take(bufs: &mut Buffers, key: &str, init: impl FnOnce() -> Tensor) -> Tensor {
    bufs.remove(key).unwrap_or_else(init)
}

fn zeros(like: &Tensor) -> impl FnOnce() -> Tensor + '_ {
    move || Tensor::zeros(like.shape())
}

fn put(bufs: &mut Buffers, key: &str, t: Tensor) {
    bufs.insert(key.to_string(), t);
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Bias-corrected Adam direction.
#[inline]
fn adam_dir(m: f64, v: f64, bc1: f64, bc2: f64, eps: f64) -> f64 {
    (m / bc1) / ((v / bc2).sqrt() + eps)
}

struct Hyper {
    t: u64,
    lr: f64,
    wd: f64,
    b1: f64,
    b2: f64,
    eps: f64,
}

impl Hyper {
    fn bc1(&self) -> f64 {
        1.0 - self.b1.powi(self.t as i32)
    }

    fn bc2(&self) -> f64 {
        1.0 - self.b2.powi(self.t as i32)
    }

    /// Multiplier for decoupled decay.
    fn decay(&self) -> f64 {
        1.0 - self.lr * self.wd
    }
}

pub(super) fn apply(spec: &OptimizerSpec, t: u64, param: &mut Param, g: &Tensor, bufs: &mut Buffers) -> Result<()> {
    let (b1, b2) = spec.betas();
    let h = Hyper {
        t,
        lr: spec.lr,
        wd: spec.weight_decay,
        b1,
        b2,
        eps: spec.eps(),
    };
    let theta = &mut param.value;
    match spec.rule {
        Rule::Adamw => adamw(&h, theta, g, bufs),
        Rule::Sgd => sgd(&h, spec.momentum(), spec.dampening(), theta, g, bufs),
        Rule::Nadamw => nadamw(&h, theta, g, bufs),
        Rule::Radam => radam(&h, theta, g, bufs),
        Rule::Adopt => adopt(&h, theta, g, bufs),
        Rule::Adan => adan(&h, theta, g, bufs),
        Rule::Adabelief => adabelief(&h, theta, g, bufs),
        Rule::CautiousAdamw => cautious_adamw(&h, theta, g, bufs),
        Rule::Ademamix => ademamix(&h, spec.alpha(), theta, g, bufs),
        Rule::Lion => lion(&h, theta, g, bufs),
        Rule::Signum => signum(&h, spec.momentum(), theta, g, bufs),
        Rule::ScheduleFreeAdamw => schedule_free(&h, theta, g, bufs),
        Rule::Soap => {
            if param.role == ParamRole::Matrix {
                soap(&h, spec.refresh(), theta, g, bufs)?
            } else {
                adamw(&h, theta, g, bufs)
            }
        }
        Rule::Muon => {
            if param.group == ParamGroup::Orthogonal {
                let mh = Hyper {
                    lr: spec.muon_lr(),
                    ..h
                };
                muon(&mh, theta, g, bufs)?
            } else {
                adamw(&h, theta, g, bufs)
            }
        }
    }
    Ok(())
}

fn adamw(h: &Hyper, theta: &mut Tensor, g: &Tensor, bufs: &mut Buffers) {
    let mut m = take(bufs, "m", zeros(g));
    let mut v = take(bufs, "v", zeros(g));
    let (bc1, bc2, decay) = (h.bc1(), h.bc2(), h.decay());
    for (((th, &gi), mi), vi) in theta.data_mut().iter_mut().zip(g.data()).zip(m.data_mut()).zip(v.data_mut()) {
        *mi = h.b1 * *mi + (1.0 - h.b1) * gi;
        *vi = h.b2 * *vi + (1.0 - h.b2) * gi * gi;
        let u = adam_dir(*mi, *vi, bc1, bc2, h.eps);
        *th = *th * decay - h.lr * u;
    }
    put(bufs, "m", m);
    put(bufs, "v", v);
}

/// Heavy-ball momentum with dampening; weight decay is added to the gradient.
fn sgd(h: &Hyper, momentum: f64, dampening: f64, theta: &mut Tensor, g: &Tensor, bufs: &mut Buffers) {
    let first = !bufs.contains_key("momentum");
    let mut buf = take(bufs, "momentum", zeros(g));
    for ((th, &gi), b) in theta.data_mut().iter_mut().zip(g.data()).zip(buf.data_mut()) {
        let d = gi + h.wd * *th;
        *b = if first { d } else { momentum * *b + (1.0 - dampening) * d };
        *th -= h.lr * *b;
    }
    put(bufs, "momentum", buf);
}

fn nadamw(h: &Hyper, theta: &mut Tensor, g: &Tensor, bufs: &mut Buffers) {
    let mut m = take(bufs, "m", zeros(g));
    let mut v = take(bufs, "v", zeros(g));
    let bc1 = h.bc1();
    let bc1_next = 1.0 - h.b1.powi(h.t as i32 + 1);
    let (bc2, decay) = (h.bc2(), h.decay());
    for (((th, &gi), mi), vi) in theta.data_mut().iter_mut().zip(g.data()).zip(m.data_mut()).zip(v.data_mut()) {
        *mi = h.b1 * *mi + (1.0 - h.b1) * gi;
        *vi = h.b2 * *vi + (1.0 - h.b2) * gi * gi;
        let m_hat = h.b1 * *mi / bc1_next + (1.0 - h.b1) * gi / bc1;
        *th = *th * decay - h.lr * m_hat / ((*vi / bc2).sqrt() + h.eps);
    }
    put(bufs, "m", m);
    put(bufs, "v", v);
}

/// Variance rectification term, or `None` while the variance estimate is
/// still unreliable.
pub(crate) fn radam_rectifier(t: u64, b2: f64) -> Option<f64> {
    let rho_inf = 2.0 / (1.0 - b2) - 1.0;
    let b2t = b2.powi(t as i32);
    let rho = rho_inf - 2.0 * t as f64 * b2t / (1.0 - b2t);
    if rho <= 4.0 {
        return None;
    }
    Some(((rho - 4.0) * (rho - 2.0) * rho_inf / ((rho_inf - 4.0) * (rho_inf - 2.0) * rho)).sqrt())
}

fn radam(h: &Hyper, theta: &mut Tensor, g: &Tensor, bufs: &mut Buffers) {
    let mut m = take(bufs, "m", zeros(g));
    let mut v = take(bufs, "v", zeros(g));
    let (bc1, bc2, decay) = (h.bc1(), h.bc2(), h.decay());
    let rect = radam_rectifier(h.t, h.b2);
    for (((th, &gi), mi), vi) in theta.data_mut().iter_mut().zip(g.data()).zip(m.data_mut()).zip(v.data_mut()) {
        *mi = h.b1 * *mi + (1.0 - h.b1) * gi;
        *vi = h.b2 * *vi + (1.0 - h.b2) * gi * gi;
        let m_hat = *mi / bc1;
        let u = match rect {
            Some(r) => r * m_hat / ((*vi / bc2).sqrt() + h.eps),
            None => m_hat,
        };
        *th = *th * decay - h.lr * u;
    }
    put(bufs, "m", m);
    put(bufs, "v", v);
}

/// The first step only seeds the second moment. Later steps normalize the
/// gradient by the previous second moment before the momentum update.
fn adopt(h: &Hyper, theta: &mut Tensor, g: &Tensor, bufs: &mut Buffers) {
    let decay = h.decay();
    if h.t == 1 || !bufs.contains_key("v") {
        for th in theta.data_mut() {
            *th *= decay;
        }
        put(bufs, "v", g.map(|x| x * x));
        put(bufs, "m", Tensor::zeros(g.shape()));
        return;
    }
    let mut m = take(bufs, "m", zeros(g));
    let mut v = take(bufs, "v", zeros(g));
    for (((th, &gi), mi), vi) in theta.data_mut().iter_mut().zip(g.data()).zip(m.data_mut()).zip(v.data_mut()) {
        let normed = gi / vi.sqrt().max(h.eps);
        *mi = h.b1 * *mi + (1.0 - h.b1) * normed;
        *th = *th * decay - h.lr * *mi;
        *vi = ADOPT_BETA2 * *vi + (1.0 - ADOPT_BETA2) * gi * gi;
    }
    put(bufs, "m", m);
    put(bufs, "v", v);
}

fn adan(h: &Hyper, theta: &mut Tensor, g: &Tensor, bufs: &mut Buffers) {
    let (b1, b2, b3) = ADAN_BETAS;
    let prev = take(bufs, "prev_grad", || g.clone());
    let mut m = take(bufs, "m", zeros(g));
    let mut n = take(bufs, "n", zeros(g));
    let mut v = take(bufs, "v", zeros(g));
    let t = h.t as i32;
    let (bc1, bc2, bc3) = (1.0 - b1.powi(t), 1.0 - b2.powi(t), 1.0 - b3.powi(t));
    let shrink = 1.0 + h.lr * h.wd;
    for (i, th) in theta.data_mut().iter_mut().enumerate() {
        let gi = g.data()[i];
        let diff = gi - prev.data()[i];
        let (mi, ni, vi) = (&mut m.data_mut()[i], &mut n.data_mut()[i], &mut v.data_mut()[i]);
        *mi = b1 * *mi + (1.0 - b1) * gi;
        *ni = b2 * *ni + (1.0 - b2) * diff;
        let z = gi + b2 * diff;
        *vi = b3 * *vi + (1.0 - b3) * z * z;
        let u = (*mi / bc1 + b2 * *ni / bc2) / ((*vi / bc3).sqrt() + h.eps);
        *th = (*th - h.lr * u) / shrink;
    }
    put(bufs, "prev_grad", g.clone());
    put(bufs, "m", m);
    put(bufs, "n", n);
    put(bufs, "v", v);
}

fn adabelief(h: &Hyper, theta: &mut Tensor, g: &Tensor, bufs: &mut Buffers) {
    let mut m = take(bufs, "m", zeros(g));
    let mut s = take(bufs, "s", zeros(g));
    let (bc1, bc2, decay) = (h.bc1(), h.bc2(), h.decay());
    for (((th, &gi), mi), si) in theta.data_mut().iter_mut().zip(g.data()).zip(m.data_mut()).zip(s.data_mut()) {
        *mi = h.b1 * *mi + (1.0 - h.b1) * gi;
        let d = gi - *mi;
        *si = h.b2 * *si + (1.0 - h.b2) * d * d + h.eps;
        let denom = si.sqrt() / bc2.sqrt() + h.eps;
        *th = *th * decay - h.lr * (*mi / bc1) / denom;
    }
    put(bufs, "m", m);
    put(bufs, "s", s);
}

/// AdamW whose update is masked to coordinates agreeing in sign with the
/// gradient, rescaled by the inverse kept fraction.
fn cautious_adamw(h: &Hyper, theta: &mut Tensor, g: &Tensor, bufs: &mut Buffers) {
    let mut m = take(bufs, "m", zeros(g));
    let mut v = take(bufs, "v", zeros(g));
    let (bc1, bc2, decay) = (h.bc1(), h.bc2(), h.decay());
    let mut u = vec![0.0; g.numel()];
    for (((ui, &gi), mi), vi) in u.iter_mut().zip(g.data()).zip(m.data_mut()).zip(v.data_mut()) {
        *mi = h.b1 * *mi + (1.0 - h.b1) * gi;
        *vi = h.b2 * *vi + (1.0 - h.b2) * gi * gi;
        *ui = adam_dir(*mi, *vi, bc1, bc2, h.eps);
    }
    let kept = u.iter().zip(g.data()).filter(|(ui, gi)| *ui * *gi > 0.0).count();
    let mean = kept as f64 / u.len() as f64;
    let scale = if kept == u.len() {
        1.0
    } else {
        1.0 / mean.max(CAUTIOUS_MIN_MEAN)
    };
    for ((th, &ui), &gi) in theta.data_mut().iter_mut().zip(&u).zip(g.data()) {
        let s = if ui * gi > 0.0 { scale } else { 0.0 };
        *th = *th * decay - h.lr * (ui * s);
    }
    put(bufs, "m", m);
    put(bufs, "v", v);
}

fn ademamix(h: &Hyper, alpha: f64, theta: &mut Tensor, g: &Tensor, bufs: &mut Buffers) {
    let mut m1 = take(bufs, "m_fast", zeros(g));
    let mut m2 = take(bufs, "m_slow", zeros(g));
    let mut v = take(bufs, "v", zeros(g));
    let (bc1, bc2, decay) = (h.bc1(), h.bc2(), h.decay());
    for (i, th) in theta.data_mut().iter_mut().enumerate() {
        let gi = g.data()[i];
        let (a, b, c) = (&mut m1.data_mut()[i], &mut m2.data_mut()[i], &mut v.data_mut()[i]);
        *a = h.b1 * *a + (1.0 - h.b1) * gi;
        *b = ADEMAMIX_BETA3 * *b + (1.0 - ADEMAMIX_BETA3) * gi;
        *c = h.b2 * *c + (1.0 - h.b2) * gi * gi;
        let u = (*a / bc1 + alpha * *b) / ((*c / bc2).sqrt() + h.eps);
        *th = *th * decay - h.lr * u;
    }
    put(bufs, "m_fast", m1);
    put(bufs, "m_slow", m2);
    put(bufs, "v", v);
}

fn lion(h: &Hyper, theta: &mut Tensor, g: &Tensor, bufs: &mut Buffers) {
    let mut m = take(bufs, "m", zeros(g));
    let decay = h.decay();
    for ((th, &gi), mi) in theta.data_mut().iter_mut().zip(g.data()).zip(m.data_mut()) {
        let c = h.b1 * *mi + (1.0 - h.b1) * gi;
        *th = *th * decay - h.lr * sign(c);
        *mi = h.b2 * *mi + (1.0 - h.b2) * gi;
    }
    put(bufs, "m", m);
}

fn signum(h: &Hyper, beta: f64, theta: &mut Tensor, g: &Tensor, bufs: &mut Buffers) {
    let mut m = take(bufs, "momentum", zeros(g));
    let decay = h.decay();
    for ((th, &gi), mi) in theta.data_mut().iter_mut().zip(g.data()).zip(m.data_mut()) {
        *mi = beta * *mi + (1.0 - beta) * gi;
        *th = *th * decay - h.lr * sign(*mi);
    }
    put(bufs, "momentum", m);
}

/// Parameters hold the gradient point y; buffers hold the base iterate z
/// and the average x.
fn schedule_free(h: &Hyper, theta: &mut Tensor, g: &Tensor, bufs: &mut Buffers) {
    let mut z = take(bufs, "z", || theta.clone());
    let mut x = take(bufs, "x", || theta.clone());
    let mut v = take(bufs, "v", zeros(g));
    let bc2 = h.bc2();
    let c = 1.0 / h.t as f64;
    for (i, y) in theta.data_mut().iter_mut().enumerate() {
        let gi = g.data()[i];
        let (zi, xi, vi) = (&mut z.data_mut()[i], &mut x.data_mut()[i], &mut v.data_mut()[i]);
        *vi = h.b2 * *vi + (1.0 - h.b2) * gi * gi;
        let step = gi / ((*vi / bc2).sqrt() + h.eps) + h.wd * *y;
        *zi -= h.lr * step;
        *xi = (1.0 - c) * *xi + c * *zi;
        *y = (1.0 - h.b1) * *zi + h.b1 * *xi;
    }
    put(bufs, "z", z);
    put(bufs, "x", x);
    put(bufs, "v", v);
}

/// Orthogonalized heavy-ball momentum for a hidden weight matrix.
fn muon(h: &Hyper, theta: &mut Tensor, g: &Tensor, bufs: &mut Buffers) -> Result<()> {
    let mut m = take(bufs, "momentum", zeros(g));
    for (mi, &gi) in m.data_mut().iter_mut().zip(g.data()) {
        *mi = MUON_MOMENTUM * *mi + gi;
    }
    let o = newton_schulz_orthogonalize(&m)?;
    let scale = (theta.rows() as f64 / theta.cols() as f64).max(1.0).sqrt();
    let decay = h.decay();
    for (th, &oi) in theta.data_mut().iter_mut().zip(o.data()) {
        *th = *th * decay - h.lr * scale * oi;
    }
    put(bufs, "momentum", m);
    Ok(())
}

fn rotate_in(ql: &Tensor, x: &Tensor, qr: &Tensor) -> Result<Tensor> {
    matmul(&matmul_tn(ql, x, Precision::F64)?, qr, Precision::F64)
}

fn rotate_out(ql: &Tensor, x: &Tensor, qr: &Tensor) -> Result<Tensor> {
    matmul_nt(&matmul(ql, x, Precision::F64)?, qr, Precision::F64)
}

/// Adam in the eigenbasis of the two-sided Shampoo accumulators.
fn soap(h: &Hyper, refresh: u64, theta: &mut Tensor, g: &Tensor, bufs: &mut Buffers) -> Result<()> {
    let (r, c) = (g.rows(), g.cols());
    let ql = take(bufs, "q_left", || Tensor::identity(r));
    let qr = take(bufs, "q_right", || Tensor::identity(c));
    let mut m = take(bufs, "m", zeros(g));
    let mut v = take(bufs, "v", zeros(g));
    let mut left = take(bufs, "l", || Tensor::zeros(&[r, r]));
    let mut right = take(bufs, "r", || Tensor::zeros(&[c, c]));

    let g_rot = rotate_in(&ql, g, &qr)?;
    for (mi, &gi) in m.data_mut().iter_mut().zip(g.data()) {
        *mi = h.b1 * *mi + (1.0 - h.b1) * gi;
    }
    let m_rot = rotate_in(&ql, &m, &qr)?;
    let (bc1, bc2, decay) = (h.bc1(), h.bc2(), h.decay());
    let mut n_rot = Tensor::zeros(g.shape());
    for (((ni, &mi), vi), &gi) in n_rot.data_mut().iter_mut().zip(m_rot.data()).zip(v.data_mut()).zip(g_rot.data()) {
        *vi = h.b2 * *vi + (1.0 - h.b2) * gi * gi;
        *ni = adam_dir(mi, *vi, bc1, bc2, h.eps);
    }
    let n = rotate_out(&ql, &n_rot, &qr)?;
    for (th, &ni) in theta.data_mut().iter_mut().zip(n.data()) {
        *th = *th * decay - h.lr * ni;
    }

    let ggt = matmul_nt(g, g, Precision::F64)?;
    let gtg = matmul_tn(g, g, Precision::F64)?;
    left = left.zip(&ggt, |a, b| h.b2 * a + b)?;
    right = right.zip(&gtg, |a, b| h.b2 * a + b)?;
    let (ql, qr) = if h.t.is_multiple_of(refresh) {
        let ql = symmetric_eigen(&left).map(|(_, q)| q).unwrap_or(ql);
        let qr = symmetric_eigen(&right).map(|(_, q)| q).unwrap_or(qr);
        (ql, qr)
    } else {
        (ql, qr)
    };
    put(bufs, "q_left", ql);
    put(bufs, "q_right", qr);
    put(bufs, "m", m);
    put(bufs, "v", v);
    put(bufs, "l", left);
    put(bufs, "r", right);
    Ok(())
}
