use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::{Dataset, DatasetMeta, Metric, Split, SplitData, TaskType};
use crate::error::{Error, Result};
use crate::nn::Tensor;
use crate::rng::RngStream;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SyntheticKind {
    /// Two isotropic unit-variance Gaussians, binary labels.
    TwoGaussians,
    /// `y = x·w + b (+ noise)`.
    LinearRegression,
    /// Friedman #1 on ten uniform features.
    Friedman,
}

impl std::str::FromStr for SyntheticKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "two_gaussians" => Ok(Self::TwoGaussians),
            "linear_regression" => Ok(Self::LinearRegression),
            "friedman" => Ok(Self::Friedman),
            other => Err(Error::Config(format!("unknown synthetic kind {other}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticOptions {
    pub kind: SyntheticKind,
    pub n: usize,
    pub seed: u64,
    /// Distance between class means in units of the per-class sd.
    pub separation: f64,
    /// Label noise sd for the regression generators.
    pub noise: f64,
    pub batch_size: usize,
}

impl SyntheticOptions {
    pub fn new(kind: SyntheticKind, n: usize, seed: u64) -> Self {
        Self {
            kind,
            n,
            seed,
            separation: 6.0,
            noise: match kind {
                SyntheticKind::Friedman => 1.0,
                _ => 0.0,
            },
            batch_size: 128,
        }
    }
}

pub const MIN_SYNTHETIC_ROWS: usize = 50;

pub fn make_synthetic(kind: SyntheticKind, n: usize, seed: u64) -> Result<Dataset> {
    make_synthetic_with(&SyntheticOptions::new(kind, n, seed))
}

struct Rows {
    num: Vec<Vec<f64>>,
    bin: Vec<f64>,
    cat: Vec<String>,
    y: Vec<f64>,
}

pub fn make_synthetic_with(opts: &SyntheticOptions) -> Result<Dataset> {
    if opts.n < MIN_SYNTHETIC_ROWS {
        return Err(Error::Config(format!(
            "synthetic datasets need at least {MIN_SYNTHETIC_ROWS} rows, got {}",
            opts.n
        )));
    }
    if opts.batch_size == 0 {
        return Err(Error::Config("batch_size must be positive".into()));
    }
    let root = RngStream::new(opts.seed).split("synthetic");
    let rows = match opts.kind {
        SyntheticKind::TwoGaussians => two_gaussians(opts, &root),
        SyntheticKind::LinearRegression => linear(opts, &root),
        SyntheticKind::Friedman => friedman(opts, &root),
    };
    let (name, task, metric) = match opts.kind {
        SyntheticKind::TwoGaussians => ("two_gaussians", TaskType::Binclass, Metric::Accuracy),
        SyntheticKind::LinearRegression => ("linear_regression", TaskType::Regression, Metric::Rmse),
        SyntheticKind::Friedman => ("friedman", TaskType::Regression, Metric::Rmse),
    };
    let d = rows.num[0].len();
    let has_extras = opts.kind == SyntheticKind::TwoGaussians;
    let meta = DatasetMeta {
        name: name.into(),
        task_type: task,
        metric,
        batch_size: opts.batch_size,
        num_features: (0..d).map(|j| format!("x{j}")).collect(),
        bin_features: if has_extras { vec!["flag".into()] } else { vec![] },
        cat_features: if has_extras { vec!["group".into()] } else { vec![] },
        skip_quantile_norm: false,
    };
    meta.validate()?;

    let n_test = opts.n * 20 / 100;
    let n_val = opts.n * 16 / 100;
    let n_train = opts.n - n_val - n_test;

    // Vocabulary in first-occurrence order over the train rows.
    let mut vocab: Vec<String> = Vec::new();
    let mut codes: HashMap<String, usize> = HashMap::new();
    if has_extras {
        for c in &rows.cat[..n_train] {
            if !codes.contains_key(c) {
                codes.insert(c.clone(), vocab.len());
                vocab.push(c.clone());
            }
        }
    }
    let build = |range: std::ops::Range<usize>| -> Result<Split> {
        let mut x = Vec::new();
        for i in range.clone() {
            x.extend_from_slice(&rows.num[i]);
            if has_extras {
                x.push(rows.bin[i]);
                x.push(codes.get(&rows.cat[i]).copied().unwrap_or(vocab.len()) as f64);
            }
        }
        let width = meta.n_features();
        Ok(Split {
            x: Tensor::new(vec![range.len(), width], x)?,
            y: rows.y[range].to_vec(),
        })
    };
    let splits = SplitData {
        train: build(0..n_train)?,
        val: build(n_train..n_train + n_val)?,
        test: build(n_train + n_val..opts.n)?,
        vocabularies: if has_extras { vec![vocab.clone()] } else { vec![] },
    };
    Ok(Dataset { meta, splits })
}

const GAUSSIAN_DIM: usize = 8;

fn two_gaussians(opts: &SyntheticOptions, root: &RngStream) -> Rows {
    let mut rng = root.split("two_gaussians");
    let shift = opts.separation / 2.0 / (GAUSSIAN_DIM as f64).sqrt();
    let mut rows = Rows {
        num: Vec::with_capacity(opts.n),
        bin: Vec::with_capacity(opts.n),
        cat: Vec::with_capacity(opts.n),
        y: Vec::with_capacity(opts.n),
    };
    for _ in 0..opts.n {
        let label = rng.below(2);
        let sign = if label == 1 { 1.0 } else { -1.0 };
        rows.num
            .push((0..GAUSSIAN_DIM).map(|_| sign * shift + rng.normal()).collect());
        rows.bin.push(rng.below(2) as f64);
        rows.cat.push(format!("g{}", rng.below(3)));
        rows.y.push(label as f64);
    }
    rows
}

const LINEAR_DIM: usize = 8;

fn linear(opts: &SyntheticOptions, root: &RngStream) -> Rows {
    let mut coef_rng = root.split("coefficients");
    let w: Vec<f64> = (0..LINEAR_DIM).map(|_| coef_rng.normal()).collect();
    let b = coef_rng.normal();
    let mut rng = root.split("rows");
    let mut num = Vec::with_capacity(opts.n);
    let mut y = Vec::with_capacity(opts.n);
    for _ in 0..opts.n {
        let x: Vec<f64> = (0..LINEAR_DIM).map(|_| rng.normal()).collect();
        let t = x.iter().zip(&w).map(|(a, c)| a * c).sum::<f64>() + b + opts.noise * rng.normal();
        num.push(x);
        y.push(t);
    }
    Rows {
        num,
        bin: vec![],
        cat: vec![],
        y,
    }
}

fn friedman(opts: &SyntheticOptions, root: &RngStream) -> Rows {
    let mut rng = root.split("friedman");
    let mut num = Vec::with_capacity(opts.n);
    let mut y = Vec::with_capacity(opts.n);
    for _ in 0..opts.n {
        let x: Vec<f64> = (0..10).map(|_| rng.uniform()).collect();
        let t = 10.0 * (std::f64::consts::PI * x[0] * x[1]).sin()
            + 20.0 * (x[2] - 0.5).powi(2)
            + 10.0 * x[3]
            + 5.0 * x[4]
            + opts.noise * rng.normal();
        num.push(x);
        y.push(t);
    }
    Rows {
        num,
        bin: vec![],
        cat: vec![],
        y,
    }
}
