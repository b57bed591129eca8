use super::{matmul, matmul_nt, matmul_tn, GradSet, Precision, Tensor};
use crate::error::{Error, Result};
use crate::rng::RngStream;

/// `y = x·W + b` for `x: B×I`, `W: I×O`, `b: O`.
pub fn linear_forward(x: &Tensor, w: &Tensor, b: &Tensor, prec: Precision) -> Result<Tensor> {
    if w.rank() != 2 || b.rank() != 1 || b.numel() != w.cols() {
        return Err(Error::Shape(format!(
            "linear weight {:?} / bias {:?}",
            w.shape(),
            b.shape()
        )));
    }
    let mut y = matmul(x, w, prec)?;
    let o = w.cols();
    for row in y.data_mut().chunks_exact_mut(o) {
        for (v, bias) in row.iter_mut().zip(b.data()) {
            *v += bias;
        }
    }
    if !y.is_finite() {
        return Err(Error::NonFinite("linear output".into()));
    }
    Ok(y)
}

pub struct LinearGrads {
    pub weight: Tensor,
    pub bias: Tensor,
    /// Gradient w.r.t. the layer input, when requested.
    pub input: Option<Tensor>,
}

pub fn linear_backward(
    x: &Tensor,
    w: &Tensor,
    dy: &Tensor,
    need_input_grad: bool,
    prec: Precision,
) -> Result<LinearGrads> {
    let weight = matmul_tn(x, dy, prec)?;
    let bias = Tensor::from_parts(vec![dy.cols()], dy.col_sums());
    let input = if need_input_grad {
        Some(matmul_nt(dy, w, prec)?)
    } else {
        None
    };
    Ok(LinearGrads {
        weight,
        bias,
        input,
    })
}

pub fn relu(x: &Tensor) -> Tensor {
    x.map(|v| v.max(0.0))
}

/// Gate `dy` by the sign of the pre-activation.
pub fn relu_backward(pre: &Tensor, dy: &Tensor) -> Tensor {
    let data = pre
        .data()
        .iter()
        .zip(dy.data())
        .map(|(&p, &g)| if p > 0.0 { g } else { 0.0 })
        .collect();
    Tensor::from_parts(dy.shape().to_vec(), data)
}

/// Inverted dropout. Returns the output and the per-element multiplier
/// (0 or 1/(1-rate)) needed for the backward pass; `None` means identity.
pub fn dropout(x: &Tensor, rate: f64, training: bool, rng: &mut RngStream) -> (Tensor, Option<Vec<f64>>) {
    if !training || rate <= 0.0 {
        return (x.clone(), None);
    }
    let keep = 1.0 / (1.0 - rate);
    let mask: Vec<f64> = (0..x.numel())
        .map(|_| if rng.uniform() < rate { 0.0 } else { keep })
        .collect();
    let data = x.data().iter().zip(&mask).map(|(v, m)| v * m).collect();
    (Tensor::from_parts(x.shape().to_vec(), data), Some(mask))
}

/// ℓ2 norm over all gradient entries concatenated.
pub fn global_norm(grads: &GradSet) -> f64 {
    grads.iter().map(|(_, g)| g.sum_sq()).sum::<f64>().sqrt()
}

/// Scale every gradient by `threshold / norm` when the global norm exceeds
/// `threshold`. Returns the pre-clip norm.
pub fn global_grad_clip(grads: &mut GradSet, threshold: f64) -> Result<f64> {
    if threshold <= 0.0 || !threshold.is_finite() {
        return Err(Error::Config(format!("clip threshold {threshold}")));
    }
    if let Some(name) = grads.first_non_finite() {
        return Err(Error::NonFinite(format!("gradient {name}")));
    }
    let norm = global_norm(grads);
    if norm > threshold {
        let s = threshold / norm;
        for (_, g) in grads.iter_mut() {
            for v in g.data_mut() {
                *v *= s;
            }
        }
    }
    Ok(norm)
}
