use std::path::Path;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use super::Tensor;
use crate::error::{Error, Result};

pub const PARAMS_FORMAT: &str = "tabopt.params";
pub const PARAMS_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParamRole {
    Matrix,
    Vector,
    Embedding,
}

impl ParamRole {
    fn admits_rank(self, rank: usize) -> bool {
        match self {
            ParamRole::Matrix => rank == 2,
            ParamRole::Vector => rank == 1,
            ParamRole::Embedding => rank == 3,
        }
    }
}

/// Optimizer grouping for rules that treat hidden weight matrices
/// differently from everything else (Muon).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParamGroup {
    /// Hidden-to-hidden weight matrices: orthogonalized updates.
    Orthogonal,
    /// Input/head weights, biases and embeddings: adaptive updates.
    Adaptive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Param {
    pub value: Tensor,
    pub role: ParamRole,
    pub group: ParamGroup,
}

/// Named, ordered parameter tensors. Iteration follows insertion order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamSet {
    entries: IndexMap<String, Param>,
}

#[derive(Serialize, Deserialize)]
struct ParamRecord {
    name: String,
    shape: Vec<usize>,
    role: ParamRole,
    group: ParamGroup,
    values: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct ParamFile {
    format: String,
    version: u32,
    params: Vec<ParamRecord>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor, role: ParamRole, group: ParamGroup) -> Result<()> {
        let name = name.into();
        if !role.admits_rank(value.rank()) {
            return Err(Error::Shape(format!(
                "parameter {name}: role {role:?} does not admit shape {:?}",
                value.shape()
            )));
        }
        if group == ParamGroup::Orthogonal && role != ParamRole::Matrix {
            return Err(Error::Config(format!(
                "parameter {name}: only matrices can join the orthogonal group"
            )));
        }
        if self.entries.contains_key(&name) {
            return Err(Error::Config(format!("duplicate parameter {name}")));
        }
        self.entries.insert(name, Param { value, role, group });
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, name: &str) -> Option<&Param> {
        self.entries.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Param> {
        self.entries.get_mut(name)
    }

    /// Parameter tensor by name; panics on an unknown name, which is a
    /// programming error inside the model code.
    pub fn tensor(&self, name: &str) -> &Tensor {
        &self
            .entries
            .get(name)
            .unwrap_or_else(|| panic!("unknown parameter {name}"))
            .value
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Param)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Param)> {
        self.entries.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn num_values(&self) -> usize {
        self.entries.values().map(|p| p.value.numel()).sum()
    }

    /// A gradient set of zeros with this set's keys and shapes.
    pub fn zeros_like(&self) -> GradSet {
        let mut g = GradSet::new();
        for (name, p) in self.iter() {
            g.insert(name, Tensor::zeros(p.value.shape()));
        }
        g
    }

    pub fn to_json(&self) -> Result<String> {
        let file = ParamFile {
            format: PARAMS_FORMAT.into(),
            version: PARAMS_VERSION,
            params: self
                .iter()
                .map(|(name, p)| ParamRecord {
                    name: name.to_string(),
                    shape: p.value.shape().to_vec(),
                    role: p.role,
                    group: p.group,
                    values: p.value.data().to_vec(),
                })
                .collect(),
        };
        Ok(serde_json::to_string(&file)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: ParamFile = serde_json::from_str(text)?;
        if file.format != PARAMS_FORMAT || file.version != PARAMS_VERSION {
            return Err(Error::Data(format!(
                "unsupported checkpoint {} v{}",
                file.format, file.version
            )));
        }
        let mut set = ParamSet::new();
        for r in file.params {
            set.insert(r.name, Tensor::new(r.shape, r.values)?, r.role, r.group)?;
        }
        Ok(set)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

/// Gradients keyed like the [`ParamSet`] they were computed for.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GradSet {
    entries: IndexMap<String, Tensor>,
}

impl GradSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, g: Tensor) {
        self.entries.insert(name.into(), g);
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.entries.get_mut(name)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor)> {
        self.entries.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    /// Keyset and shape agreement with `params`.
    pub fn check_matches(&self, params: &ParamSet) -> Result<()> {
        if self.len() != params.len() {
            return Err(Error::Shape(format!(
                "{} gradients for {} parameters",
                self.len(),
                params.len()
            )));
        }
        for (name, p) in params.iter() {
            let g = self
                .get(name)
                .ok_or_else(|| Error::Shape(format!("missing gradient for {name}")))?;
            if g.shape() != p.value.shape() {
                return Err(Error::Shape(format!(
                    "gradient {name}: {:?} vs parameter {:?}",
                    g.shape(),
                    p.value.shape()
                )));
            }
        }
        Ok(())
    }

    /// First non-finite entry, if any.
    pub fn first_non_finite(&self) -> Option<&str> {
        self.iter().find(|(_, g)| !g.is_finite()).map(|(n, _)| n)
    }
}
