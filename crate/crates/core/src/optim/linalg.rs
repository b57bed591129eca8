//! Newton–Schulz orthogonalization and a symmetric Jacobi eigensolver.

use crate::constants::{JACOBI_MAX_SWEEPS, NS_COEFFS, NS_ITERS, NS_POLISH_COEFFS, NS_POLISH_ITERS};
use crate::error::{Error, Result};
use crate::nn::{matmul, matmul_nt, Precision, Tensor};

fn ns_iteration(x: &Tensor, (a, b, c): (f64, f64, f64)) -> Result<Tensor> {
    // x is wide (rows ≤ cols): A = X·Xᵀ is the small Gram matrix.
    let gram = matmul_nt(x, x, Precision::F64)?;
    let gram2 = matmul(&gram, &gram, Precision::F64)?;
    let poly = gram.zip(&gram2, |g, g2| b * g + c * g2)?;
    let px = matmul(&poly, x, Precision::F64)?;
    x.zip(&px, |v, p| a * v + p)
}

/// Approximate orthogonal factor `U·Vᵀ` of `m` with `iters` quintic
/// iterations followed by the polishing iterations.
pub fn newton_schulz_with(m: &Tensor, iters: usize, polish: usize) -> Result<Tensor> {
    if m.rank() != 2 {
        return Err(Error::Shape(format!("orthogonalization needs a matrix, got {:?}", m.shape())));
    }
    let norm = m.frobenius();
    if norm == 0.0 {
        return Ok(m.clone());
    }
    let tall = m.rows() > m.cols();
    let mut x = if tall { m.transpose() } else { m.clone() }.scale(1.0 / norm);
    for _ in 0..iters {
        x = ns_iteration(&x, NS_COEFFS)?;
    }
    for _ in 0..polish {
        x = ns_iteration(&x, NS_POLISH_COEFFS)?;
    }
    if !x.is_finite() {
        return Err(Error::NonFinite("Newton-Schulz iterate".into()));
    }
    Ok(if tall { x.transpose() } else { x })
}

/// Orthogonalize with the pinned iteration counts.
pub fn newton_schulz_orthogonalize(m: &Tensor) -> Result<Tensor> {
    newton_schulz_with(m, NS_ITERS, NS_POLISH_ITERS)
}

/// Eigen-decomposition of a symmetric matrix by cyclic Jacobi rotations.
///
/// Returns eigenvalues in descending order and the matching eigenvectors as
/// the columns of a square matrix. `None` when the input is not finite or
/// the sweeps do not converge.
pub fn symmetric_eigen(a: &Tensor) -> Option<(Vec<f64>, Tensor)> {
    let n = a.rows();
    if a.rank() != 2 || a.cols() != n || !a.is_finite() {
        return None;
    }
    let mut m: Vec<f64> = a.data().to_vec();
    for i in 0..n {
        for j in 0..i {
            let s = 0.5 * (m[i * n + j] + m[j * n + i]);
            m[i * n + j] = s;
            m[j * n + i] = s;
        }
    }
    let mut v = Tensor::identity(n).into_data();
    let total: f64 = m.iter().map(|x| x * x).sum();
    let tol = 1e-28 * total.max(f64::MIN_POSITIVE);
    let off_diagonal = |m: &[f64]| -> f64 {
        (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| m[i * n + j] * m[i * n + j])
            .sum()
    };
    for _ in 0..JACOBI_MAX_SWEEPS {
        if off_diagonal(&m) <= tol {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = m[p * n + q];
                if apq == 0.0 {
                    continue;
                }
                let theta = (m[q * n + q] - m[p * n + p]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (m[k * n + p], m[k * n + q]);
                    m[k * n + p] = c * akp - s * akq;
                    m[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (m[p * n + k], m[q * n + k]);
                    m[p * n + k] = c * apk - s * aqk;
                    m[q * n + k] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let (vkp, vkq) = (v[k * n + p], v[k * n + q]);
                    v[k * n + p] = c * vkp - s * vkq;
                    v[k * n + q] = s * vkp + c * vkq;
                }
            }
        }
    }
    // Rounding can stall the last sweeps; accept anything near convergence.
    if m.iter().any(|x| !x.is_finite()) || off_diagonal(&m) > 1e-20 * total {
        return None;
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m[j * n + j].total_cmp(&m[i * n + i]));
    let values = order.iter().map(|&i| m[i * n + i]).collect();
    let mut vecs = vec![0.0; n * n];
    for (col, &src) in order.iter().enumerate() {
        for k in 0..n {
            vecs[k * n + col] = v[k * n + src];
        }
    }
    Some((values, Tensor::new(vec![n, n], vecs).ok()?))
}
