//! Column-typed tabular datasets: loading, preprocessing and synthetic
//! generators.
//!
//! A dataset directory holds `meta.json` plus `train.csv`, `val.csv` and
//! `test.csv`. Every CSV has a header row with the feature columns named in
//! the metadata and a `label` column.

mod preprocess;
mod synthetic;

use std::collections::{HashMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Tensor;

pub use preprocess::{
    EncodedDataset, EncodedSplit, LabelNormalizer, Preprocessor, QuantileMap,
};
pub use synthetic::{make_synthetic, make_synthetic_with, SyntheticKind, SyntheticOptions};

pub const LABEL_COLUMN: &str = "label";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskType {
    Binclass,
    Multiclass,
    Regression,
}

impl TaskType {
    pub fn is_classification(self) -> bool {
        self != TaskType::Regression
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Accuracy,
    RocAuc,
    Rmse,
}

impl Metric {
    /// `true` when larger values are better for the metric as reported.
    pub fn higher_is_better(self) -> bool {
        self != Metric::Rmse
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetMeta {
    pub name: String,
    pub task_type: TaskType,
    pub metric: Metric,
    pub batch_size: usize,
    pub num_features: Vec<String>,
    pub bin_features: Vec<String>,
    pub cat_features: Vec<String>,
    pub skip_quantile_norm: bool,
}

impl DatasetMeta {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Data("batch_size must be positive".into()));
        }
        let mut seen = HashSet::new();
        for c in self.feature_columns() {
            if c == LABEL_COLUMN {
                return Err(Error::Data("feature column named 'label'".into()));
            }
            if !seen.insert(c) {
                return Err(Error::Data(format!("column {c} listed twice")));
            }
        }
        let ok = match self.metric {
            Metric::RocAuc => self.task_type == TaskType::Binclass,
            Metric::Rmse => self.task_type == TaskType::Regression,
            Metric::Accuracy => self.task_type.is_classification(),
        };
        if !ok {
            return Err(Error::Data(format!(
                "metric/task mismatch: {:?} with {:?}",
                self.metric, self.task_type
            )));
        }
        Ok(())
    }

    /// Feature columns in storage order: numeric, binary, categorical.
    pub fn feature_columns(&self) -> impl Iterator<Item = &str> {
        self.num_features
            .iter()
            .chain(&self.bin_features)
            .chain(&self.cat_features)
            .map(String::as_str)
    }

    pub fn n_features(&self) -> usize {
        self.num_features.len() + self.bin_features.len() + self.cat_features.len()
    }
}

/// One split before encoding. Categorical columns hold vocabulary codes,
/// with `vocab.len()` as the unknown code.
#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    pub x: Tensor,
    pub y: Vec<f64>,
}

impl Split {
    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitData {
    pub train: Split,
    pub val: Split,
    pub test: Split,
    /// Per categorical column, the train-split values in first-occurrence order.
    pub vocabularies: Vec<Vec<String>>,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub meta: DatasetMeta,
    pub splits: SplitData,
}

impl Dataset {
    /// Number of classes for classification (1 for regression).
    pub fn n_classes(&self) -> usize {
        if !self.meta.task_type.is_classification() {
            return 1;
        }
        let max = [&self.splits.train, &self.splits.val, &self.splits.test]
            .iter()
            .flat_map(|s| s.y.iter())
            .fold(0.0f64, |a, &b| a.max(b));
        max as usize + 1
    }
}

pub fn read_meta(dir: &Path) -> Result<DatasetMeta> {
    let path = dir.join("meta.json");
    if !path.exists() {
        return Err(Error::MissingFile(path));
    }
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let meta: DatasetMeta = serde_json::from_str(&text).map_err(|e| {
        Error::Data(format!("{}: {e}", path.display()))
    })?;
    meta.validate()?;
    Ok(meta)
}

struct RawTable {
    header: Vec<String>,
    rows: Vec<csv::StringRecord>,
}

fn read_csv(path: &Path) -> Result<RawTable> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)?;
    let header = reader.headers()?.iter().map(str::to_string).collect();
    let rows = reader.records().collect::<std::result::Result<Vec<_>, _>>()?;
    Ok(RawTable { header, rows })
}

fn parse_f64(s: &str, col: &str, file: &str) -> Result<f64> {
    let v: f64 = s
        .trim()
        .parse()
        .map_err(|_| Error::Data(format!("{file}: non-numeric value {s:?} in column {col}")))?;
    if !v.is_finite() {
        return Err(Error::Data(format!("{file}: non-finite value in column {col}")));
    }
    Ok(v)
}

fn column_index(meta: &DatasetMeta, table: &RawTable, file: &str) -> Result<(Vec<usize>, usize)> {
    let pos: HashMap<&str, usize> = table
        .header
        .iter()
        .enumerate()
        .map(|(i, h)| (h.as_str(), i))
        .collect();
    if pos.len() != table.header.len() {
        return Err(Error::Data(format!("{file}: duplicate header names")));
    }
    let expected: HashSet<&str> = meta
        .feature_columns()
        .chain(std::iter::once(LABEL_COLUMN))
        .collect();
    let actual: HashSet<&str> = pos.keys().copied().collect();
    if expected != actual {
        let mut missing: Vec<_> = expected.difference(&actual).collect();
        let mut extra: Vec<_> = actual.difference(&expected).collect();
        missing.sort();
        extra.sort();
        return Err(Error::Data(format!(
            "{file}: column mismatch with meta (missing {missing:?}, unexpected {extra:?})"
        )));
    }
    let features = meta.feature_columns().map(|c| pos[c]).collect();
    Ok((features, pos[LABEL_COLUMN]))
}

fn parse_split(
    meta: &DatasetMeta,
    table: &RawTable,
    file: &str,
    vocab: &mut [Vec<String>],
    grow_vocab: bool,
) -> Result<Split> {
    if table.rows.is_empty() {
        return Err(Error::Data(format!("{file}: no rows")));
    }
    let (features, label_col) = column_index(meta, table, file)?;
    let n_num = meta.num_features.len();
    let n_bin = meta.bin_features.len();
    let mut lookup: Vec<HashMap<String, usize>> = vocab
        .iter()
        .map(|v| v.iter().enumerate().map(|(i, s)| (s.clone(), i)).collect())
        .collect();
    let width = features.len();
    let mut x = Vec::with_capacity(table.rows.len() * width);
    let mut y = Vec::with_capacity(table.rows.len());
    let names: Vec<&str> = meta.feature_columns().collect();
    for (r, rec) in table.rows.iter().enumerate() {
        if rec.len() != table.header.len() {
            return Err(Error::Data(format!("{file}: row {} has {} fields", r + 1, rec.len())));
        }
        for (j, &c) in features.iter().enumerate() {
            let raw = &rec[c];
            if j < n_num {
                x.push(parse_f64(raw, names[j], file)?);
            } else if j < n_num + n_bin {
                let v = parse_f64(raw, names[j], file)?;
                if v != 0.0 && v != 1.0 {
                    return Err(Error::Data(format!(
                        "{file}: binary column {} holds {v}",
                        names[j]
                    )));
                }
                x.push(v);
            } else {
                let k = j - n_num - n_bin;
                let code = match lookup[k].get(raw) {
                    Some(&code) => code,
                    None if grow_vocab => {
                        let code = vocab[k].len();
                        vocab[k].push(raw.to_string());
                        lookup[k].insert(raw.to_string(), code);
                        code
                    }
                    None => vocab[k].len(),
                };
                x.push(code as f64);
            }
        }
        let label = parse_f64(&rec[label_col], LABEL_COLUMN, file)?;
        if meta.task_type.is_classification() && (label < 0.0 || label.fract() != 0.0) {
            return Err(Error::Data(format!("{file}: class label {label} is not a class index")));
        }
        if meta.task_type == TaskType::Binclass && label > 1.0 {
            return Err(Error::Data(format!("{file}: binary label {label}")));
        }
        y.push(label);
    }
    // Codes of unknown categories may exceed the final train vocabulary only
    // for val/test; train codes are always in range.
    let x = Tensor::new(vec![y.len(), width], x)?;
    Ok(Split { x, y })
}

/// Load `meta.json` and the three split CSVs from `dir`.
pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let meta = read_meta(dir)?;
    let tables = ["train.csv", "val.csv", "test.csv"]
        .iter()
        .map(|f| read_csv(&dir.join(f)))
        .collect::<Result<Vec<_>>>()?;
    let mut vocab = vec![Vec::new(); meta.cat_features.len()];
    let train = parse_split(&meta, &tables[0], "train.csv", &mut vocab, true)?;
    let val = parse_split(&meta, &tables[1], "val.csv", &mut vocab, false)?;
    let test = parse_split(&meta, &tables[2], "test.csv", &mut vocab, false)?;
    Ok(Dataset {
        meta,
        splits: SplitData {
            train,
            val,
            test,
            vocabularies: vocab,
        },
    })
}

fn write_split(path: &Path, meta: &DatasetMeta, split: &Split, vocab: &[Vec<String>]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header: Vec<&str> = meta.feature_columns().collect();
    header.push(LABEL_COLUMN);
    w.write_record(&header)?;
    let n_num = meta.num_features.len();
    let n_bin = meta.bin_features.len();
    for i in 0..split.len() {
        let mut rec: Vec<String> = Vec::with_capacity(header.len());
        for (j, &v) in split.x.row(i).iter().enumerate() {
            if j < n_num + n_bin {
                rec.push(format!("{v}"));
            } else {
                let k = j - n_num - n_bin;
                let code = v as usize;
                rec.push(vocab[k].get(code).cloned().unwrap_or_else(|| format!("__unknown{code}")));
            }
        }
        rec.push(format!("{}", split.y[i]));
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Write a dataset in the directory layout read by [`load_dataset`].
pub fn write_dataset(dir: &Path, ds: &Dataset) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let meta_path = dir.join("meta.json");
    let text = serde_json::to_string_pretty(&ds.meta)?;
    std::fs::write(&meta_path, text + "\n").map_err(|e| Error::io(&meta_path, e))?;
    let s = &ds.splits;
    write_split(&dir.join("train.csv"), &ds.meta, &s.train, &s.vocabularies)?;
    write_split(&dir.join("val.csv"), &ds.meta, &s.val, &s.vocabularies)?;
    write_split(&dir.join("test.csv"), &ds.meta, &s.test, &s.vocabularies)?;
    Ok(())
}
