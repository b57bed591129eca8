//! Exponential moving average of model weights.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::ParamSet;

/// Shadow copy of the weights, `shadow ← decay·shadow + (1−decay)·params`
/// after every optimizer step. Starts at the initial weights, with no bias
/// correction.
#[derive(Debug, Clone, PartialEq)]
pub struct EmaTracker {
    pub decay: f64,
    pub shadow: ParamSet,
    pub update_count: u64,
}

#[derive(Serialize, Deserialize)]
struct EmaFile {
    decay: f64,
    update_count: u64,
    shadow: serde_json::Value,
}

impl EmaTracker {
    /// `decay` in `[0, 1)`; zero makes the shadow follow the live weights.
    pub fn new(decay: f64, params: &ParamSet) -> Result<Self> {
        if !(0.0..1.0).contains(&decay) {
            return Err(Error::Config(format!("EMA decay {decay} outside [0, 1)")));
        }
        Ok(Self {
            decay,
            shadow: params.clone(),
            update_count: 0,
        })
    }

    pub fn update(&mut self, params: &ParamSet) -> Result<()> {
        if self.shadow.len() != params.len() {
            return Err(Error::Shape(format!(
                "EMA tracks {} tensors, got {}",
                self.shadow.len(),
                params.len()
            )));
        }
        let d = self.decay;
        for ((sname, s), (pname, p)) in self.shadow.iter_mut().zip(params.iter()) {
            if sname != pname || s.value.shape() != p.value.shape() {
                return Err(Error::Shape(format!("EMA shadow {sname} does not match {pname}")));
            }
            for (sv, &pv) in s.value.data_mut().iter_mut().zip(p.value.data()) {
                *sv = d * *sv + (1.0 - d) * pv;
            }
        }
        self.update_count += 1;
        Ok(())
    }

    pub fn eval_params(&self) -> &ParamSet {
        &self.shadow
    }

    pub fn to_json(&self) -> Result<String> {
        let file = EmaFile {
            decay: self.decay,
            update_count: self.update_count,
            shadow: serde_json::from_str(&self.shadow.to_json()?)?,
        };
        Ok(serde_json::to_string(&file)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: EmaFile = serde_json::from_str(text)?;
        let shadow = ParamSet::from_json(&file.shadow.to_string())?;
        let mut t = Self::new(file.decay, &shadow)?;
        t.update_count = file.update_count;
        Ok(t)
    }
}
