use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use super::{Dataset, DatasetMeta, Split};
use crate::constants::{QUANTILE_JITTER, QUANTILE_MAX_REFERENCES};
use crate::error::{Error, Result};
use crate::nn::Tensor;
use crate::rng::RngStream;

fn std_normal() -> Normal {
    Normal::new(0.0, 1.0).expect("standard normal")
}

/// Empirical quantile of sorted data with linear interpolation between
/// order statistics.
fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Piecewise-linear interpolation of `x` on increasing `xs` (ties allowed:
/// the leftmost matching segment wins), clamped at the ends.
fn interp(x: f64, xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len();
    if x <= xs[0] {
        return ys[0];
    }
    if x >= xs[n - 1] {
        return ys[n - 1];
    }
    let i = xs.partition_point(|&v| v <= x);
    let (x0, x1, y0, y1) = (xs[i - 1], xs[i], ys[i - 1], ys[i]);
    if x1 == x0 {
        return y0;
    }
    y0 + (x - x0) / (x1 - x0) * (y1 - y0)
}

/// Map from a numeric column onto standard-normal scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantileMap {
    references: Vec<f64>,
    probs: Vec<f64>,
    p_min: f64,
    constant: bool,
}

impl QuantileMap {
    /// Fit on a column. `jitter` holds one standard-normal draw per value.
    pub fn fit(values: &[f64], jitter: &[f64]) -> Result<Self> {
        let n = values.len();
        if n == 0 {
            return Err(Error::Data("quantile map fit on no values".into()));
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let sd = (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64).sqrt();
        let p_min = 1.0 / (2.0 * n as f64);
        if sd == 0.0 {
            return Ok(Self {
                references: vec![values[0]],
                probs: vec![0.5],
                p_min,
                constant: true,
            });
        }
        let mut noisy: Vec<f64> = values
            .iter()
            .zip(jitter)
            .map(|(v, g)| v + QUANTILE_JITTER * sd * g)
            .collect();
        noisy.sort_by(f64::total_cmp);
        let n_refs = n.clamp(2, QUANTILE_MAX_REFERENCES);
        let probs: Vec<f64> = (0..n_refs).map(|i| i as f64 / (n_refs - 1) as f64).collect();
        let references = probs.iter().map(|&p| quantile_sorted(&noisy, p)).collect();
        Ok(Self {
            references,
            probs,
            p_min,
            constant: false,
        })
    }

    /// Largest absolute output, `Φ⁻¹(1 − 1/(2n))`.
    pub fn bound(&self) -> f64 {
        std_normal().inverse_cdf(1.0 - self.p_min)
    }

    pub fn transform(&self, x: f64) -> f64 {
        self.transform_column(std::iter::once(x))[0]
    }

    /// Vectorized [`QuantileMap::transform`]. Runs of equal reference values
    /// map to the middle of their probability range (average of the forward
    /// and reversed interpolation).
    pub fn transform_column(&self, xs: impl Iterator<Item = f64>) -> Vec<f64> {
        if self.constant {
            return xs.map(|_| 0.0).collect();
        }
        let neg_refs: Vec<f64> = self.references.iter().rev().map(|v| -v).collect();
        let rev_probs: Vec<f64> = self.probs.iter().rev().copied().collect();
        let normal = std_normal();
        xs.map(|x| {
            let fwd = interp(x, &self.references, &self.probs);
            let bwd = interp(-x, &neg_refs, &rev_probs);
            let p = (0.5 * (fwd + bwd)).clamp(self.p_min, 1.0 - self.p_min);
            normal.inverse_cdf(p)
        })
        .collect()
    }
}

/// z-scoring of regression targets; identity for classification.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabelNormalizer {
    pub mean: f64,
    pub std: f64,
}

impl LabelNormalizer {
    pub const IDENTITY: LabelNormalizer = LabelNormalizer { mean: 0.0, std: 1.0 };

    pub fn fit(labels: &[f64]) -> Self {
        let n = labels.len() as f64;
        let mean = labels.iter().sum::<f64>() / n;
        let var = labels.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / n;
        let std = if var > 0.0 { var.sqrt() } else { 1.0 };
        Self { mean, std }
    }

    pub fn normalize(&self, y: f64) -> f64 {
        (y - self.mean) / self.std
    }

    pub fn inverse(&self, z: f64) -> f64 {
        z * self.std + self.mean
    }
}

/// Train-fitted feature and label transforms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Preprocessor {
    pub seed: u64,
    pub n_num: usize,
    pub n_bin: usize,
    /// `None` when numeric normalization is skipped for the dataset.
    pub quantile: Option<Vec<QuantileMap>>,
    pub vocabularies: Vec<Vec<String>>,
    pub labels: LabelNormalizer,
}

impl Preprocessor {
    pub fn fit(meta: &DatasetMeta, train: &Split, vocabularies: &[Vec<String>], seed: u64) -> Result<Self> {
        if train.is_empty() {
            return Err(Error::Data("cannot fit a preprocessor on an empty train split".into()));
        }
        let n_num = meta.num_features.len();
        let n_bin = meta.bin_features.len();
        if train.x.cols() != meta.n_features() || vocabularies.len() != meta.cat_features.len() {
            return Err(Error::Shape("train split does not match metadata".into()));
        }
        let quantile = if meta.skip_quantile_norm {
            None
        } else {
            let root = RngStream::new(seed).split("quantile-jitter");
            let maps = (0..n_num)
                .map(|j| {
                    let col: Vec<f64> = (0..train.len()).map(|i| train.x.get2(i, j)).collect();
                    let mut rng = root.split_index("column", j as u64);
                    let jitter: Vec<f64> = (0..col.len()).map(|_| rng.normal()).collect();
                    QuantileMap::fit(&col, &jitter)
                })
                .collect::<Result<Vec<_>>>()?;
            Some(maps)
        };
        let labels = if meta.task_type.is_classification() {
            LabelNormalizer::IDENTITY
        } else {
            LabelNormalizer::fit(&train.y)
        };
        Ok(Self {
            seed,
            n_num,
            n_bin,
            quantile,
            vocabularies: vocabularies.to_vec(),
            labels,
        })
    }

    /// Width of [`Preprocessor::transform`]'s output.
    pub fn output_width(&self) -> usize {
        self.n_num + self.n_bin + self.vocabularies.iter().map(|v| v.len() + 1).sum::<usize>()
    }

    /// One-hot row for a raw categorical value; the last slot is the
    /// unknown bucket.
    pub fn one_hot(&self, column: usize, value: &str) -> Vec<f64> {
        let vocab = &self.vocabularies[column];
        let mut out = vec![0.0; vocab.len() + 1];
        let code = vocab.iter().position(|v| v == value).unwrap_or(vocab.len());
        out[code] = 1.0;
        out
    }

    /// Encoded features: normalized numeric, binary passthrough, one-hot
    /// categorical (with unknown bucket).
    pub fn transform(&self, split: &Split) -> Result<Tensor> {
        let n_cat = self.vocabularies.len();
        if split.x.cols() != self.n_num + self.n_bin + n_cat {
            return Err(Error::Shape(format!(
                "split has {} columns, preprocessor was fit on {}",
                split.x.cols(),
                self.n_num + self.n_bin + n_cat
            )));
        }
        let rows = split.len();
        let width = self.output_width();
        let mut out = vec![0.0; rows * width];
        for j in 0..self.n_num {
            let col = (0..rows).map(|i| split.x.get2(i, j));
            let values: Vec<f64> = match &self.quantile {
                Some(maps) => maps[j].transform_column(col),
                None => col.collect(),
            };
            for (i, v) in values.into_iter().enumerate() {
                out[i * width + j] = v;
            }
        }
        for j in self.n_num..self.n_num + self.n_bin {
            for i in 0..rows {
                out[i * width + j] = split.x.get2(i, j);
            }
        }
        let mut offset = self.n_num + self.n_bin;
        for (k, vocab) in self.vocabularies.iter().enumerate() {
            let j = self.n_num + self.n_bin + k;
            for i in 0..rows {
                let code = (split.x.get2(i, j) as usize).min(vocab.len());
                out[i * width + offset + code] = 1.0;
            }
            offset += vocab.len() + 1;
        }
        Tensor::new(vec![rows, width], out)
    }
}

/// A split ready for training.
#[derive(Debug, Clone)]
pub struct EncodedSplit {
    /// Encoded features, numeric columns first.
    pub x: Tensor,
    /// Raw numeric columns (before normalization), used by the embeddings.
    pub num_raw: Option<Tensor>,
    /// Labels in original units.
    pub y: Vec<f64>,
    /// Training targets: normalized labels for regression, class indices otherwise.
    pub target: Vec<f64>,
}

impl EncodedSplit {
    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn classes(&self) -> Vec<usize> {
        self.target.iter().map(|&c| c as usize).collect()
    }

    /// Row subset, used for minibatches.
    pub fn select(&self, idx: &[usize]) -> EncodedSplit {
        EncodedSplit {
            x: self.x.select_rows(idx),
            num_raw: self.num_raw.as_ref().map(|t| t.select_rows(idx)),
            y: idx.iter().map(|&i| self.y[i]).collect(),
            target: idx.iter().map(|&i| self.target[i]).collect(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct EncodedDataset {
    pub meta: DatasetMeta,
    pub n_classes: usize,
    pub n_num: usize,
    pub preprocessor: Preprocessor,
    pub train: EncodedSplit,
    pub val: EncodedSplit,
    pub test: EncodedSplit,
    /// Population standard deviation of the raw test labels.
    pub test_label_std: f64,
}

impl EncodedDataset {
    pub fn prepare(ds: &Dataset, seed: u64) -> Result<Self> {
        let prep = Preprocessor::fit(&ds.meta, &ds.splits.train, &ds.splits.vocabularies, seed)?;
        let n_num = ds.meta.num_features.len();
        let encode = |s: &Split| -> Result<EncodedSplit> {
            let num_raw = (n_num > 0).then(|| s.x.slice_cols(0, n_num));
            Ok(EncodedSplit {
                x: prep.transform(s)?,
                num_raw,
                y: s.y.clone(),
                target: s.y.iter().map(|&y| prep.labels.normalize(y)).collect(),
            })
        };
        let train = encode(&ds.splits.train)?;
        let val = encode(&ds.splits.val)?;
        let test = encode(&ds.splits.test)?;
        let n = test.y.len() as f64;
        let mean = test.y.iter().sum::<f64>() / n;
        let test_label_std = (test.y.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / n).sqrt();
        Ok(Self {
            meta: ds.meta.clone(),
            n_classes: ds.n_classes(),
            n_num,
            preprocessor: prep,
            train,
            val,
            test,
            test_label_std,
        })
    }

    pub fn input_width(&self) -> usize {
        self.train.x.cols()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Metric, TaskType};
    use proptest::prelude::*;

    fn meta(n_num: usize, n_bin: usize, cats: usize, task: TaskType) -> DatasetMeta {
        DatasetMeta {
            name: "t".into(),
            task_type: task,
            metric: if task == TaskType::Regression { Metric::Rmse } else { Metric::Accuracy },
            batch_size: 8,
            num_features: (0..n_num).map(|i| format!("n{i}")).collect(),
            bin_features: (0..n_bin).map(|i| format!("b{i}")).collect(),
            cat_features: (0..cats).map(|i| format!("c{i}")).collect(),
            skip_quantile_norm: false,
        }
    }

    fn split(rows: Vec<Vec<f64>>, y: Vec<f64>) -> Split {
        Split {
            x: Tensor::from_rows(&rows).unwrap(),
            y,
        }
    }

    #[test]
    fn median_maps_to_zero() {
        let m = meta(1, 0, 0, TaskType::Binclass);
        let s = split((1..=5).map(|v| vec![v as f64]).collect(), vec![0.0; 5]);
        let p = Preprocessor::fit(&m, &s, &[], 0).unwrap();
        let t = p.quantile.as_ref().unwrap()[0].transform(3.0);
        assert!(t.abs() < 1e-2, "{t}");
    }

    #[test]
    fn regression_labels_are_z_scored() {
        let n = LabelNormalizer { mean: 10.0, std: 2.0 };
        assert_eq!(n.normalize(12.0), 1.0);
        let fit = LabelNormalizer::fit(&[8.0, 12.0]);
        assert_eq!(fit, LabelNormalizer { mean: 10.0, std: 2.0 });
    }

    #[test]
    fn one_hot_vocabulary_and_unknown_bucket() {
        // Vocabulary by first occurrence of {a, b, a}: [a, b].
        let m = meta(0, 0, 1, TaskType::Binclass);
        let vocab = vec![vec!["a".to_string(), "b".to_string()]];
        let s = split(vec![vec![0.0], vec![1.0], vec![0.0]], vec![0.0; 3]);
        let p = Preprocessor::fit(&m, &s, &vocab, 0).unwrap();
        assert_eq!(p.one_hot(0, "b"), vec![0.0, 1.0, 0.0]);
        assert_eq!(p.one_hot(0, "a"), vec![1.0, 0.0, 0.0]);
        assert_eq!(p.one_hot(0, "c"), vec![0.0, 0.0, 1.0]);
        // Brute force: every vocabulary entry round-trips through its one-hot slot.
        for (i, v) in vocab[0].iter().enumerate() {
            let oh = p.one_hot(0, v);
            assert_eq!(oh.iter().position(|&x| x == 1.0), Some(i));
            assert_eq!(oh.iter().sum::<f64>(), 1.0);
        }
        let unknown = split(vec![vec![2.0]], vec![0.0]);
        assert_eq!(p.transform(&unknown).unwrap().data(), &[0.0, 0.0, 1.0]);
    }

    #[test]
    fn binary_passthrough_and_width() {
        let m = meta(1, 1, 1, TaskType::Binclass);
        let vocab = vec![vec!["x".to_string()]];
        let s = split(
            vec![vec![0.1, 1.0, 0.0], vec![0.7, 0.0, 0.0], vec![0.3, 1.0, 0.0]],
            vec![0.0, 1.0, 0.0],
        );
        let p = Preprocessor::fit(&m, &s, &vocab, 0).unwrap();
        let t = p.transform(&s).unwrap();
        assert_eq!(t.cols(), 1 + 1 + 2);
        assert_eq!(p.output_width(), 4);
        let bins: Vec<f64> = (0..3).map(|i| t.get2(i, 1)).collect();
        assert_eq!(bins, vec![1.0, 0.0, 1.0]);
    }

    #[test]
    fn constant_column_maps_to_zero() {
        let m = meta(1, 0, 0, TaskType::Binclass);
        let s = split(vec![vec![4.0]; 6], vec![0.0; 6]);
        let p = Preprocessor::fit(&m, &s, &[], 0).unwrap();
        let t = p.transform(&s).unwrap();
        assert!(t.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn empty_train_is_an_error() {
        let m = meta(1, 0, 0, TaskType::Binclass);
        let s = Split {
            x: Tensor::zeros(&[1, 1]),
            y: vec![],
        };
        assert!(Preprocessor::fit(&m, &s, &[], 0).is_err());
    }

    #[test]
    fn column_set_mismatch_is_an_error() {
        let m = meta(2, 0, 0, TaskType::Binclass);
        let s = split(vec![vec![1.0, 2.0], vec![2.0, 3.0]], vec![0.0, 1.0]);
        let p = Preprocessor::fit(&m, &s, &[], 0).unwrap();
        let narrow = split(vec![vec![1.0]], vec![0.0]);
        assert!(p.transform(&narrow).is_err());
    }

    #[test]
    fn uniform_sample_becomes_standard_normal() {
        // Monte Carlo: the normal-quantile map of 1000 uniform draws has
        // mean ~ 0 (sd 0.03) and sd ~ 1.
        let mut rng = RngStream::new(11);
        let rows: Vec<Vec<f64>> = (0..1000).map(|_| vec![rng.uniform()]).collect();
        let m = meta(1, 0, 0, TaskType::Binclass);
        let s = split(rows, vec![0.0; 1000]);
        let p = Preprocessor::fit(&m, &s, &[], 0).unwrap();
        let t = p.transform(&s).unwrap();
        let n = 1000.0;
        let mean = t.sum() / n;
        let sd = (t.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
        assert!(mean.abs() < 0.1, "{mean}");
        assert!(sd > 0.85 && sd < 1.15, "{sd}");
        let bound = p.quantile.as_ref().unwrap()[0].bound();
        assert!(t.data().iter().all(|v| v.abs() <= bound + 1e-12));
    }

    #[test]
    fn out_of_range_values_clamp_to_the_extremes() {
        let m = meta(1, 0, 0, TaskType::Binclass);
        let s = split((0..50).map(|v| vec![v as f64]).collect(), vec![0.0; 50]);
        let p = Preprocessor::fit(&m, &s, &[], 0).unwrap();
        let q = &p.quantile.as_ref().unwrap()[0];
        assert_eq!(q.transform(-1e9), -q.bound());
        assert_eq!(q.transform(1e9), q.bound());
    }

    #[test]
    fn same_seed_gives_byte_identical_state() {
        let m = meta(2, 0, 0, TaskType::Regression);
        let mut rng = RngStream::new(5);
        let rows: Vec<Vec<f64>> = (0..40).map(|_| vec![rng.normal(), (rng.below(3)) as f64]).collect();
        let y: Vec<f64> = (0..40).map(|i| i as f64).collect();
        let s = split(rows, y);
        let a = serde_json::to_string(&Preprocessor::fit(&m, &s, &[], 9).unwrap()).unwrap();
        let b = serde_json::to_string(&Preprocessor::fit(&m, &s, &[], 9).unwrap()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn fit_ignores_other_splits() {
        let ds = super::super::make_synthetic(super::super::SyntheticKind::Friedman, 200, 1).unwrap();
        let a = EncodedDataset::prepare(&ds, 0).unwrap();
        let mut other = ds.clone();
        let n = other.splits.val.len();
        let rev: Vec<usize> = (0..n).rev().take(n / 2).collect();
        other.splits.val = Split {
            x: other.splits.val.x.select_rows(&rev),
            y: rev.iter().map(|&i| other.splits.val.y[i]).collect(),
        };
        other.splits.test = Split {
            x: other.splits.test.x.select_rows(&[0]),
            y: vec![other.splits.test.y[0]],
        };
        let b = EncodedDataset::prepare(&other, 0).unwrap();
        assert_eq!(a.train.x, b.train.x);
        assert_eq!(a.preprocessor, b.preprocessor);
    }

    proptest! {
        #[test]
        fn quantile_map_is_monotone(
            col in prop::collection::vec(-100.0f64..100.0, 2..60),
            a in -150.0f64..150.0,
            b in -150.0f64..150.0,
            seed in 0u64..1000,
        ) {
            let mut rng = RngStream::new(seed);
            let jitter: Vec<f64> = col.iter().map(|_| rng.normal()).collect();
            let q = QuantileMap::fit(&col, &jitter).unwrap();
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(q.transform(lo) <= q.transform(hi));
        }

        #[test]
        fn label_round_trip(ys in prop::collection::vec(-1e6f64..1e6, 2..50)) {
            let n = LabelNormalizer::fit(&ys);
            for &y in &ys {
                let back = n.inverse(n.normalize(y));
                prop_assert!((back - y).abs() <= 1e-9 * y.abs().max(1.0));
            }
        }
    }
}
