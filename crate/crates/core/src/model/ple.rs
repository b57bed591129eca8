//! Piecewise-linear encoding of numeric features.
//!
//! Each feature is split into quantile bins on its raw train values. A value
//! x in bin t encodes as ones for every bin left of t, the fraction
//! (x − b_t)/(b_{t+1} − b_t) for bin t, and zeros to the right. Values beyond
//! the outer edges clamp to all-zeros / all-ones.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PleConfig {
    pub n_bins: usize,
    pub d_embedding: usize,
}

impl PleConfig {
    pub fn validate(&self) -> Result<()> {
        if !(2..=128).contains(&self.n_bins) {
            return Err(Error::Config(format!("n_bins {} outside [2, 128]", self.n_bins)));
        }
        if self.d_embedding == 0 {
            return Err(Error::Config("d_embedding must be positive".into()));
        }
        Ok(())
    }
}

/// Fitted bin edges per numeric feature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PleEncoder {
    pub n_bins: usize,
    pub d_embedding: usize,
    /// Strictly increasing edges per feature. Fewer than three edges means
    /// the feature falls back to passthrough.
    pub edges: Vec<Vec<f64>>,
}

fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

impl PleEncoder {
    /// Fit edges on raw train features `x_num: B×F`.
    pub fn fit(x_num: &Tensor, cfg: &PleConfig) -> Result<Self> {
        cfg.validate()?;
        let (rows, feats) = (x_num.rows(), x_num.cols());
        let edges = (0..feats)
            .map(|f| {
                let mut col: Vec<f64> = (0..rows).map(|i| x_num.get2(i, f)).collect();
                col.sort_by(f64::total_cmp);
                let mut e: Vec<f64> = (0..=cfg.n_bins)
                    .map(|t| quantile_sorted(&col, t as f64 / cfg.n_bins as f64))
                    .collect();
                e.dedup();
                e
            })
            .collect();
        Ok(Self {
            n_bins: cfg.n_bins,
            d_embedding: cfg.d_embedding,
            edges,
        })
    }

    pub fn from_edges(edges: Vec<Vec<f64>>, d_embedding: usize) -> Result<Self> {
        for e in &edges {
            if e.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::Config("bin edges must be strictly increasing".into()));
            }
        }
        let n_bins = edges.iter().map(|e| e.len().saturating_sub(1)).max().unwrap_or(1).max(1);
        Ok(Self {
            n_bins,
            d_embedding,
            edges,
        })
    }

    pub fn n_features(&self) -> usize {
        self.edges.len()
    }

    /// `true` when feature `f` has fewer than two bins and passes through.
    pub fn is_passthrough(&self, f: usize) -> bool {
        self.edges[f].len() < 3
    }

    /// Encoding of one value into `out` (length `n_bins`).
    pub fn encode_value(&self, f: usize, x: f64, passthrough: f64, out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        if self.is_passthrough(f) {
            out[0] = passthrough;
            return;
        }
        let e = &self.edges[f];
        for t in 0..e.len() - 1 {
            out[t] = ((x - e[t]) / (e[t + 1] - e[t])).clamp(0.0, 1.0);
        }
    }

    /// `B×F` raw features to a `B×F×n_bins` encoding. `fallback` supplies the
    /// values used for passthrough features.
    pub fn encode(&self, x_num: &Tensor, fallback: &Tensor) -> Result<Tensor> {
        let (rows, feats) = (x_num.rows(), x_num.cols());
        if feats != self.n_features() {
            return Err(Error::Shape(format!(
                "{feats} numeric features, encoder fit on {}",
                self.n_features()
            )));
        }
        let nb = self.n_bins;
        let mut out = vec![0.0; rows * feats * nb];
        for i in 0..rows {
            for f in 0..feats {
                let slot = &mut out[(i * feats + f) * nb..(i * feats + f + 1) * nb];
                self.encode_value(f, x_num.get2(i, f), fallback.get2(i, f), slot);
            }
        }
        Tensor::new(vec![rows, feats, nb], out)
    }
}

/// Encode `x` against `edges` (helper for callers without a fitted encoder).
pub fn ple_encode(x_num: &Tensor, encoder: &PleEncoder) -> Result<Tensor> {
    encoder.encode(x_num, x_num)
}
