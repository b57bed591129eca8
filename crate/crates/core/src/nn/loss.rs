use super::Tensor;
use crate::error::{Error, Result};

/// Mean loss over the batch and its gradient w.r.t. the model output.
#[derive(Debug, Clone)]
pub struct LossOutput {
    pub value: f64,
    pub grad: Tensor,
}

/// Row-wise log-softmax with max subtraction.
pub fn log_softmax_rows(logits: &Tensor) -> Tensor {
    let k = logits.cols();
    let mut out = Vec::with_capacity(logits.numel());
    for row in logits.data().chunks_exact(k) {
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        out.extend(row.iter().map(|v| v - lse));
    }
    Tensor::from_parts(logits.shape().to_vec(), out)
}

pub fn softmax_rows(logits: &Tensor) -> Tensor {
    log_softmax_rows(logits).map(f64::exp)
}

/// Mean cross-entropy of `logits (B×K)` against class indices.
pub fn cross_entropy(logits: &Tensor, classes: &[usize]) -> Result<LossOutput> {
    if !logits.is_finite() {
        return Err(Error::NonFinite("logits".into()));
    }
    let (b, k) = (logits.rows(), logits.cols());
    if classes.len() != b {
        return Err(Error::Shape(format!("{} labels for {b} rows", classes.len())));
    }
    if let Some(&c) = classes.iter().find(|&&c| c >= k) {
        return Err(Error::Data(format!("class index {c} out of range for {k} classes")));
    }
    let logp = log_softmax_rows(logits);
    let mut value = 0.0;
    let mut grad = logp.map(f64::exp);
    let inv_b = 1.0 / b as f64;
    for (i, &c) in classes.iter().enumerate() {
        value -= logp.get2(i, c);
        let row = &mut grad.data_mut()[i * k..(i + 1) * k];
        row[c] -= 1.0;
        for v in row.iter_mut() {
            *v *= inv_b;
        }
    }
    Ok(LossOutput {
        value: value * inv_b,
        grad,
    })
}

/// Cross-entropy of a single logit vector.
pub fn cross_entropy_single(logits: &[f64], class: usize) -> Result<f64> {
    let t = Tensor::new(vec![1, logits.len()], logits.to_vec())?;
    Ok(cross_entropy(&t, &[class])?.value)
}

/// Mean squared error over batch and outputs.
pub fn mse(pred: &Tensor, target: &Tensor) -> Result<LossOutput> {
    if !pred.same_shape(target) {
        return Err(Error::Shape(format!(
            "mse {:?} vs {:?}",
            pred.shape(),
            target.shape()
        )));
    }
    let n = pred.numel() as f64;
    let diff = pred.sub(target)?;
    Ok(LossOutput {
        value: diff.sum_sq() / n,
        grad: diff.scale(2.0 / n),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_logits_give_ln_k() {
        for k in [2usize, 3, 7] {
            let l = cross_entropy_single(&vec![0.3; k], 1).unwrap();
            assert!((l - (k as f64).ln()).abs() < 1e-14);
        }
    }

    #[test]
    fn large_logits_do_not_overflow() {
        // log(1 + e^-1000) underflows to 0 at any precision we can represent.
        let l = cross_entropy_single(&[1000.0, 0.0], 0).unwrap();
        assert!(l.abs() < 1e-300);
        let l = cross_entropy_single(&[1000.0, 0.0], 1).unwrap();
        assert!((l - 1000.0).abs() < 1e-9);
    }

    #[test]
    fn class_out_of_range() {
        assert!(cross_entropy_single(&[0.0, 0.0], 2).is_err());
    }

    #[test]
    fn mse_zero_when_equal() {
        let p = Tensor::from_rows(&[vec![1.0, 2.0]]).unwrap();
        let out = mse(&p, &p).unwrap();
        assert_eq!(out.value, 0.0);
        assert!(out.grad.data().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn ce_gradient_matches_finite_differences() {
        let logits = Tensor::from_rows(&[vec![0.2, -1.0, 0.5], vec![1.5, 0.1, -0.3]]).unwrap();
        let classes = [2, 0];
        let out = cross_entropy(&logits, &classes).unwrap();
        let h = 1e-6;
        for i in 0..logits.numel() {
            let mut p = logits.clone();
            p.data_mut()[i] += h;
            let mut m = logits.clone();
            m.data_mut()[i] -= h;
            let fd = (cross_entropy(&p, &classes).unwrap().value - cross_entropy(&m, &classes).unwrap().value) / (2.0 * h);
            assert!((fd - out.grad.data()[i]).abs() < 1e-8);
        }
    }
}
