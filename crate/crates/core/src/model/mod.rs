//! MLP backbones: plain, with piecewise-linear numeric embeddings, and packed
//! ensembles of independent MLPs.
//!
//! A [`Network`] is a pure description (dimensions, fitted bin edges, task);
//! weights live in a separate [`ParamSet`]. Forward passes record a
//! [`ForwardTrace`] that the matching backward pass consumes.

pub mod ple;

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use ple::{ple_encode, PleConfig, PleEncoder};

use crate::data::{EncodedDataset, EncodedSplit};
use crate::error::{Error, Result};
use crate::nn::{
    cross_entropy, dropout, linear_backward, linear_forward, mse, relu, relu_backward, softmax_rows, GradSet,
    ParamGroup, ParamRole, ParamSet, Precision, Tensor,
};
use crate::rng::RngStream;

/// Rows per chunk when predicting on a whole split.
const EVAL_CHUNK: usize = 2048;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Mlp,
    MlpPle,
    TabmPacked,
}

impl ModelKind {
    pub const ALL: [ModelKind; 3] = [ModelKind::Mlp, ModelKind::MlpPle, ModelKind::TabmPacked];

    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Mlp => "mlp",
            ModelKind::MlpPle => "mlp_ple",
            ModelKind::TabmPacked => "tabm_packed",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ModelKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown model {s:?} (expected mlp, mlp_ple or tabm_packed)")))
    }
}

/// Dimensions of one MLP: `n_layers` blocks of linear→ReLU→dropout and a
/// linear head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpConfig {
    pub n_layers: usize,
    pub width: usize,
    pub dropout: f64,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl MlpConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_layers == 0 || self.width == 0 || self.in_dim == 0 || self.out_dim == 0 {
            return Err(Error::Config(format!("MLP dimensions must be positive: {self:?}")));
        }
        if !(0.0..=0.5).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0, 0.5]", self.dropout)));
        }
        Ok(())
    }

    pub fn num_params(&self) -> usize {
        let mut n = 0;
        let mut fan_in = self.in_dim;
        for _ in 0..self.n_layers {
            n += fan_in * self.width + self.width;
            fan_in = self.width;
        }
        n + fan_in * self.out_dim + self.out_dim
    }
}

/// Model hyperparameters as tuned and stored in run records.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelConfig {
    Mlp {
        n_layers: usize,
        width: usize,
        dropout: f64,
    },
    MlpPle {
        n_layers: usize,
        width: usize,
        dropout: f64,
        n_bins: usize,
        d_embedding: usize,
    },
    TabmPacked {
        k: usize,
        n_layers: usize,
        width: usize,
        dropout: f64,
    },
}

impl ModelConfig {
    pub fn kind(&self) -> ModelKind {
        match self {
            ModelConfig::Mlp { .. } => ModelKind::Mlp,
            ModelConfig::MlpPle { .. } => ModelKind::MlpPle,
            ModelConfig::TabmPacked { .. } => ModelKind::TabmPacked,
        }
    }

    fn backbone(&self) -> (usize, usize, f64) {
        match *self {
            ModelConfig::Mlp {
                n_layers,
                width,
                dropout,
            }
            | ModelConfig::MlpPle {
                n_layers,
                width,
                dropout,
                ..
            }
            | ModelConfig::TabmPacked {
                n_layers,
                width,
                dropout,
                ..
            } => (n_layers, width, dropout),
        }
    }
}

/// Name of parameter `suffix` in block `block` (1-based) of member `prefix`.
fn block_name(prefix: &str, block: usize, suffix: &str) -> String {
    format!("{prefix}block{block}.linear.{suffix}")
}

fn member_prefix(members: usize, j: usize) -> String {
    if members == 1 {
        String::new()
    } else {
        format!("member{j}.")
    }
}

fn uniform_tensor(shape: &[usize], bound: f64, rng: &mut RngStream) -> Result<Tensor> {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.uniform_range(-bound, bound)).collect())
}

fn insert_mlp(ps: &mut ParamSet, prefix: &str, cfg: &MlpConfig, root: &RngStream) -> Result<()> {
    let mut fan_in = cfg.in_dim;
    for i in 1..=cfg.n_layers + 1 {
        let head = i == cfg.n_layers + 1;
        let out = if head { cfg.out_dim } else { cfg.width };
        let (wname, bname) = if head {
            (format!("{prefix}head.weight"), format!("{prefix}head.bias"))
        } else {
            (block_name(prefix, i, "weight"), block_name(prefix, i, "bias"))
        };
        let bound = 1.0 / (fan_in as f64).sqrt();
        let w = uniform_tensor(&[fan_in, out], bound, &mut root.split(&wname))?;
        let b = uniform_tensor(&[out], bound, &mut root.split(&bname))?;
        let group = if i == 1 || head {
            ParamGroup::Adaptive
        } else {
            ParamGroup::Orthogonal
        };
        ps.insert(wname, w, ParamRole::Matrix, group)?;
        ps.insert(bname, b, ParamRole::Vector, ParamGroup::Adaptive)?;
        fan_in = out;
    }
    Ok(())
}

fn init_stream(seed: u64) -> RngStream {
    RngStream::new(seed).split("init")
}

/// Parameters of a single MLP with the given seed.
pub fn build_mlp(cfg: &MlpConfig, seed: u64) -> Result<ParamSet> {
    cfg.validate()?;
    let mut ps = ParamSet::new();
    insert_mlp(&mut ps, "", cfg, &init_stream(seed))?;
    Ok(ps)
}

/// Whether dropout is active, and where its masks come from.
pub enum Mode<'a> {
    Train(&'a mut RngStream),
    Eval,
}

struct MemberTrace {
    /// Input to each linear layer, the head last.
    inputs: Vec<Tensor>,
    pres: Vec<Tensor>,
    masks: Vec<Option<Vec<f64>>>,
}

/// Activations recorded by a forward pass.
pub struct ForwardTrace {
    /// Raw outputs (logits or normalized regression values) per member.
    pub outputs: Vec<Tensor>,
    members: Vec<MemberTrace>,
    codes: Option<Tensor>,
    batch: usize,
}

impl ForwardTrace {
    /// Sign pattern of every hidden pre-activation, member by member.
    pub fn activation_pattern(&self) -> Vec<bool> {
        self.members
            .iter()
            .flat_map(|m| m.pres.iter())
            .flat_map(|p| p.data().iter().map(|&v| v > 0.0))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Network {
    pub kind: ModelKind,
    /// Per-member MLP; `in_dim` is the width after the embedding.
    pub backbone: MlpConfig,
    pub members: usize,
    /// Fitted embedding. `None` feeds the encoded features directly.
    pub embedding: Option<PleEncoder>,
    /// Leading numeric columns of the encoded input.
    pub n_num: usize,
    /// Class count; `None` for regression.
    pub n_classes: Option<usize>,
    pub precision: Precision,
}

impl Network {
    /// Single plain MLP over inputs of width `cfg.in_dim`.
    pub fn plain(cfg: MlpConfig, n_classes: Option<usize>) -> Result<Self> {
        Self::packed(cfg, 1, n_classes)
    }

    /// `k` independent MLPs with averaged predictions.
    pub fn packed(cfg: MlpConfig, k: usize, n_classes: Option<usize>) -> Result<Self> {
        let net = Self {
            kind: if k == 1 { ModelKind::Mlp } else { ModelKind::TabmPacked },
            backbone: cfg,
            members: k,
            embedding: None,
            n_num: 0,
            n_classes,
            precision: Precision::F64,
        };
        net.validate()?;
        Ok(net)
    }

    /// Network for `cfg` on a prepared dataset. Embedding edges are fitted on
    /// the raw train numeric columns.
    pub fn build(cfg: &ModelConfig, data: &EncodedDataset, precision: Precision) -> Result<Self> {
        let (n_layers, width, dropout) = cfg.backbone();
        let n_classes = data.meta.task_type.is_classification().then_some(data.n_classes);
        let out_dim = n_classes.unwrap_or(1);
        let width_in = data.input_width();
        let (members, embedding) = match *cfg {
            ModelConfig::Mlp { .. } => (1, None),
            ModelConfig::TabmPacked { k, .. } => (k, None),
            ModelConfig::MlpPle {
                n_bins, d_embedding, ..
            } => {
                let pc = PleConfig { n_bins, d_embedding };
                pc.validate()?;
                match &data.train.num_raw {
                    Some(raw) => (1, Some(PleEncoder::fit(raw, &pc)?)),
                    None => (1, None),
                }
            }
        };
        let in_dim = match &embedding {
            Some(e) => e.n_features() * e.d_embedding + width_in - data.n_num,
            None => width_in,
        };
        let net = Self {
            kind: cfg.kind(),
            backbone: MlpConfig {
                n_layers,
                width,
                dropout,
                in_dim,
                out_dim,
            },
            members,
            embedding,
            n_num: data.n_num,
            n_classes,
            precision,
        };
        net.validate()?;
        Ok(net)
    }

    pub fn validate(&self) -> Result<()> {
        self.backbone.validate()?;
        if self.members == 0 {
            return Err(Error::Config("k must be at least 1".into()));
        }
        if self.embedding.is_some() && self.members != 1 {
            return Err(Error::Config("embeddings are only supported for a single member".into()));
        }
        if let Some(k) = self.n_classes {
            if k < 2 || self.backbone.out_dim != k {
                return Err(Error::Config(format!("{k} classes vs {} outputs", self.backbone.out_dim)));
            }
        } else if self.backbone.out_dim != 1 {
            return Err(Error::Config("regression needs a single output".into()));
        }
        Ok(())
    }

    pub fn member_prefix(&self, j: usize) -> String {
        member_prefix(self.members, j)
    }

    /// Fresh parameters. Each tensor draws from its own named stream, so the
    /// same name gets the same values across architectures.
    pub fn init_params(&self, seed: u64) -> Result<ParamSet> {
        let root = init_stream(seed);
        let mut ps = ParamSet::new();
        if let Some(e) = &self.embedding {
            let bound = 1.0 / (e.n_bins as f64).sqrt();
            let (f, nb, d) = (e.n_features(), e.n_bins, e.d_embedding);
            let w = uniform_tensor(&[f, nb, d], bound, &mut root.split("embedding.weight"))?;
            let b = uniform_tensor(&[f * d], bound, &mut root.split("embedding.bias"))?;
            ps.insert("embedding.weight", w, ParamRole::Embedding, ParamGroup::Adaptive)?;
            ps.insert("embedding.bias", b, ParamRole::Vector, ParamGroup::Adaptive)?;
        }
        for j in 0..self.members {
            insert_mlp(&mut ps, &self.member_prefix(j), &self.backbone, &root)?;
        }
        Ok(ps)
    }

    fn embed(&self, params: &ParamSet, batch: &EncodedSplit) -> Result<(Tensor, Option<Tensor>)> {
        let Some(enc) = &self.embedding else {
            return Ok((batch.x.clone(), None));
        };
        let raw = batch
            .num_raw
            .as_ref()
            .ok_or_else(|| Error::Shape("embedding needs raw numeric columns".into()))?;
        let normalized = batch.x.slice_cols(0, self.n_num);
        let codes = enc.encode(raw, &normalized)?;
        let (rows, f, nb, d) = (batch.len(), enc.n_features(), enc.n_bins, enc.d_embedding);
        let w = params.tensor("embedding.weight").data();
        let b = params.tensor("embedding.bias").data();
        let mut e = vec![0.0; rows * f * d];
        for i in 0..rows {
            for ft in 0..f {
                let out = &mut e[(i * f + ft) * d..(i * f + ft + 1) * d];
                out.copy_from_slice(&b[ft * d..(ft + 1) * d]);
                let code = &codes.data()[(i * f + ft) * nb..(i * f + ft + 1) * nb];
                for (t, &c) in code.iter().enumerate() {
                    if c != 0.0 {
                        let wr = &w[(ft * nb + t) * d..(ft * nb + t + 1) * d];
                        for (o, &wv) in out.iter_mut().zip(wr) {
                            *o += c * wv;
                        }
                    }
                }
            }
        }
        let e = Tensor::new(vec![rows, f * d], e)?;
        let input = if batch.x.cols() > self.n_num {
            Tensor::hcat(&[&e, &batch.x.slice_cols(self.n_num, batch.x.cols())])?
        } else {
            e
        };
        Ok((input, Some(codes)))
    }

    pub fn forward(&self, params: &ParamSet, batch: &EncodedSplit, mut mode: Mode<'_>) -> Result<ForwardTrace> {
        let (input, codes) = self.embed(params, batch)?;
        if input.cols() != self.backbone.in_dim {
            return Err(Error::Shape(format!(
                "input width {} but network expects {}",
                input.cols(),
                self.backbone.in_dim
            )));
        }
        let cfg = &self.backbone;
        let mut outputs = Vec::with_capacity(self.members);
        let mut members = Vec::with_capacity(self.members);
        for j in 0..self.members {
            let prefix = self.member_prefix(j);
            let mut h = input.clone();
            let mut tr = MemberTrace {
                inputs: Vec::with_capacity(cfg.n_layers + 1),
                pres: Vec::with_capacity(cfg.n_layers),
                masks: Vec::with_capacity(cfg.n_layers),
            };
            for i in 1..=cfg.n_layers {
                let pre = linear_forward(
                    &h,
                    params.tensor(&block_name(&prefix, i, "weight")),
                    params.tensor(&block_name(&prefix, i, "bias")),
                    self.precision,
                )?;
                let act = relu(&pre);
                let (out, mask) = match &mut mode {
                    Mode::Train(rng) => dropout(&act, cfg.dropout, true, rng),
                    Mode::Eval => (act, None),
                };
                tr.inputs.push(std::mem::replace(&mut h, out));
                tr.pres.push(pre);
                tr.masks.push(mask);
            }
            let y = linear_forward(
                &h,
                params.tensor(&format!("{prefix}head.weight")),
                params.tensor(&format!("{prefix}head.bias")),
                self.precision,
            )?;
            tr.inputs.push(h);
            outputs.push(y);
            members.push(tr);
        }
        Ok(ForwardTrace {
            outputs,
            members,
            codes,
            batch: batch.len(),
        })
    }

    /// Mean of per-member losses and its gradient w.r.t. each member output.
    pub fn loss(&self, outputs: &[Tensor], batch: &EncodedSplit) -> Result<(f64, Vec<Tensor>)> {
        let k = outputs.len() as f64;
        let mut total = 0.0;
        let mut grads = Vec::with_capacity(outputs.len());
        let classes = self.n_classes.map(|_| batch.classes());
        let target = if classes.is_none() {
            Some(Tensor::new(vec![batch.len(), 1], batch.target.clone())?)
        } else {
            None
        };
        for out in outputs {
            let l = match (&classes, &target) {
                (Some(c), _) => cross_entropy(out, c)?,
                (None, Some(t)) => mse(out, t)?,
                _ => unreachable!(),
            };
            total += l.value;
            grads.push(l.grad.scale(1.0 / k));
        }
        Ok((total / k, grads))
    }

    /// Gradients of the loss whose output gradients are `d_outputs`.
    pub fn backward(&self, params: &ParamSet, trace: ForwardTrace, d_outputs: &[Tensor]) -> Result<GradSet> {
        if d_outputs.len() != self.members {
            return Err(Error::Shape(format!("{} output grads for {} members", d_outputs.len(), self.members)));
        }
        let cfg = &self.backbone;
        let mut found: HashMap<String, Tensor> = HashMap::new();
        let mut d_input_total: Option<Tensor> = None;
        let need_input = self.embedding.is_some();
        for (j, (tr, dy)) in trace.members.into_iter().zip(d_outputs).enumerate() {
            if dy.shape() != [trace.batch, cfg.out_dim] {
                return Err(Error::Shape(format!("output grad {:?}", dy.shape())));
            }
            let prefix = self.member_prefix(j);
            let head_w = format!("{prefix}head.weight");
            let g = linear_backward(&tr.inputs[cfg.n_layers], params.tensor(&head_w), dy, true, self.precision)?;
            found.insert(head_w, g.weight);
            found.insert(format!("{prefix}head.bias"), g.bias);
            let mut d = g.input.expect("requested");
            for i in (1..=cfg.n_layers).rev() {
                if let Some(mask) = &tr.masks[i - 1] {
                    d.data_mut().iter_mut().zip(mask).for_each(|(v, m)| *v *= m);
                }
                let d_pre = relu_backward(&tr.pres[i - 1], &d);
                let wname = block_name(&prefix, i, "weight");
                let need = i > 1 || need_input;
                let g = linear_backward(&tr.inputs[i - 1], params.tensor(&wname), &d_pre, need, self.precision)?;
                found.insert(wname, g.weight);
                found.insert(block_name(&prefix, i, "bias"), g.bias);
                if let Some(di) = g.input {
                    d = di;
                }
            }
            if need_input {
                d_input_total = Some(match d_input_total {
                    Some(acc) => acc.add(&d)?,
                    None => d,
                });
            }
        }
        if let (Some(enc), Some(codes), Some(d_in)) = (&self.embedding, &trace.codes, d_input_total) {
            let (f, nb, d) = (enc.n_features(), enc.n_bins, enc.d_embedding);
            let mut dw = vec![0.0; f * nb * d];
            let mut db = vec![0.0; f * d];
            for i in 0..trace.batch {
                let row = &d_in.row(i)[..f * d];
                for (acc, &g) in db.iter_mut().zip(row) {
                    *acc += g;
                }
                for ft in 0..f {
                    let ge = &row[ft * d..(ft + 1) * d];
                    let code = &codes.data()[(i * f + ft) * nb..(i * f + ft + 1) * nb];
                    for (t, &c) in code.iter().enumerate() {
                        if c != 0.0 {
                            let slot = &mut dw[(ft * nb + t) * d..(ft * nb + t + 1) * d];
                            for (s, &gv) in slot.iter_mut().zip(ge) {
                                *s += c * gv;
                            }
                        }
                    }
                }
            }
            found.insert("embedding.weight".into(), Tensor::new(vec![f, nb, d], dw)?);
            found.insert("embedding.bias".into(), Tensor::new(vec![f * d], db)?);
        }
        let mut grads = GradSet::new();
        for name in params.names() {
            let g = found
                .remove(name)
                .ok_or_else(|| Error::Shape(format!("no gradient produced for {name}")))?;
            grads.insert(name, g);
        }
        Ok(grads)
    }

    /// Loss and gradients on one minibatch. `rng = None` disables dropout.
    pub fn loss_and_grad(
        &self,
        params: &ParamSet,
        batch: &EncodedSplit,
        rng: Option<&mut RngStream>,
    ) -> Result<(f64, GradSet)> {
        let mut graph = Graph::new(self);
        let mode = match rng {
            Some(r) => Mode::Train(r),
            None => Mode::Eval,
        };
        let outputs = graph.forward(params, batch, mode)?.to_vec();
        let (loss, d_out) = self.loss(&outputs, batch)?;
        let grads = graph.backward(params, &d_out)?;
        Ok((loss, grads))
    }

    /// Eval-mode outputs of each member.
    pub fn member_outputs(&self, params: &ParamSet, split: &EncodedSplit) -> Result<Vec<Tensor>> {
        Ok(self.forward(params, split, Mode::Eval)?.outputs)
    }

    fn combine(&self, outputs: &[Tensor]) -> Result<Tensor> {
        let k = outputs.len() as f64;
        let mut acc: Option<Tensor> = None;
        for out in outputs {
            let part = if self.n_classes.is_some() {
                softmax_rows(out)
            } else {
                out.clone()
            };
            acc = Some(match acc {
                Some(a) => a.add(&part)?,
                None => part,
            });
        }
        Ok(acc.expect("at least one member").scale(1.0 / k))
    }

    /// Predictions on a whole split: class probabilities (`B×K`) or
    /// normalized regression values (`B×1`), averaged over members.
    pub fn predict(&self, params: &ParamSet, split: &EncodedSplit) -> Result<Tensor> {
        let n = split.len();
        if n <= EVAL_CHUNK {
            return self.combine(&self.member_outputs(params, split)?);
        }
        let mut data = Vec::with_capacity(n * self.backbone.out_dim);
        for start in (0..n).step_by(EVAL_CHUNK) {
            let idx: Vec<usize> = (start..(start + EVAL_CHUNK).min(n)).collect();
            let part = self.combine(&self.member_outputs(params, &split.select(&idx))?)?;
            data.extend_from_slice(part.data());
        }
        Tensor::new(vec![n, self.backbone.out_dim], data)
    }
}

/// One forward/backward cycle. Backward without a preceding forward is an
/// error rather than a stale-activation bug.
pub struct Graph<'a> {
    net: &'a Network,
    trace: Option<ForwardTrace>,
}

impl<'a> Graph<'a> {
    pub fn new(net: &'a Network) -> Self {
        Self { net, trace: None }
    }

    pub fn forward(&mut self, params: &ParamSet, batch: &EncodedSplit, mode: Mode<'_>) -> Result<&[Tensor]> {
        let trace = self.net.forward(params, batch, mode)?;
        Ok(&self.trace.insert(trace).outputs)
    }

    pub fn backward(&mut self, params: &ParamSet, d_outputs: &[Tensor]) -> Result<GradSet> {
        let trace = self
            .trace
            .take()
            .ok_or_else(|| Error::Config("backward called before forward".into()))?;
        self.net.backward(params, trace, d_outputs)
    }
}
