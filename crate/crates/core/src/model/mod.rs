//! Decoder-only transformer with a language-model head and a two-layer
//! classification head reading the hidden state of the last prefix token.
//!
//! Weights are stored `[d_in, d_out]` and applied as `x · W`. A LoRA adapter
//! on a projection stores `A: [d_in, r]` and `B: [r, d_out]` and adds
//! `(alpha / r) · x · A · B`, so the effective weight is `W + (alpha/r)·A·B`.

mod decode;
mod params;

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use num_traits::Float;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::rng::{stream, ChaCha8Rng};
use crate::tensor::{kernels, Real, Tape, Tensor, TensorError, Var};

pub use decode::{Decoding, KvCache};
pub use params::{Bound, Param, ParamGroup, ParamId, ParamStore};

pub const LN_EPS: f64 = 1e-5;
const MASK_FILL: f64 = -1e9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LoraTarget {
    Query,
    Key,
    Value,
    Output,
}

impl LoraTarget {
    pub const ALL: [LoraTarget; 4] = [Self::Query, Self::Key, Self::Value, Self::Output];

    fn short(self) -> &'static str {
        match self {
            Self::Query => "q",
            Self::Key => "k",
            Self::Value => "v",
            Self::Output => "o",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub max_seq_len: usize,
    pub cls_hidden_dim: usize,
    pub cls_dropout: f64,
    pub lora_rank: usize,
    pub lora_alpha: f64,
    pub lora_dropout: f64,
    pub lora_targets: Vec<LoraTarget>,
    /// Standard deviation of the normal init for embeddings and projections.
    pub init_std: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            vocab_size: 200,
            d_model: 64,
            n_layers: 4,
            n_heads: 4,
            d_ff: 256,
            max_seq_len: 256,
            cls_hidden_dim: 128,
            cls_dropout: 0.1,
            lora_rank: 8,
            lora_alpha: 16.0,
            lora_dropout: 0.05,
            lora_targets: LoraTarget::ALL.to_vec(),
            init_std: 0.02,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let dims = [
            self.vocab_size,
            self.d_model,
            self.n_layers,
            self.n_heads,
            self.d_ff,
            self.max_seq_len,
            self.cls_hidden_dim,
        ];
        if dims.contains(&0) {
            return Err(ModelError::InvalidConfig("all dimensions must be positive"));
        }
        if !self.d_model.is_multiple_of(self.n_heads) {
            return Err(ModelError::InvalidConfig("d_model must be divisible by n_heads"));
        }
        if self.lora_rank == 0 {
            return Err(ModelError::InvalidConfig("lora_rank must be at least 1"));
        }
        for p in [self.cls_dropout, self.lora_dropout] {
            if !(0.0..1.0).contains(&p) {
                return Err(ModelError::InvalidConfig("dropout rates must lie in [0, 1)"));
            }
        }
        if !(self.lora_alpha.is_finite() && self.lora_alpha > 0.0) {
            return Err(ModelError::InvalidConfig("lora_alpha must be positive"));
        }
        if !(self.init_std.is_finite() && self.init_std > 0.0) {
            return Err(ModelError::InvalidConfig("init_std must be positive"));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    pub fn lora_scale(&self) -> f64 {
        self.lora_alpha / self.lora_rank as f64
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    InvalidConfig(&'static str),
    #[error("sequence of {len} tokens exceeds max_seq_len {max}")]
    SequenceTooLong { len: usize, max: usize },
    #[error("token id {id} outside vocabulary of {vocab}")]
    UnknownToken { id: usize, vocab: usize },
    #[error("prefix_len {prefix_len} invalid for a sequence of {len} tokens")]
    BadPrefix { prefix_len: usize, len: usize },
    #[error("empty token sequence")]
    Empty,
    #[error("LoRA adapters are already attached")]
    LoraAttached,
    #[error("parameter layout mismatch: {0}")]
    Layout(alloc::string::String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Linear {
    pub w: ParamId,
    pub b: Option<ParamId>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LoraPair {
    pub a: ParamId,
    pub b: ParamId,
}

/// An attention projection with an optional adapter.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Proj {
    pub base: Linear,
    pub lora: Option<LoraPair>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Norm {
    pub gain: ParamId,
    pub bias: ParamId,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Block {
    pub ln1: Norm,
    pub q: Proj,
    pub k: Proj,
    pub v: Proj,
    pub o: Proj,
    pub ln2: Norm,
    pub ff1: Linear,
    pub ff2: Linear,
}

impl Block {
    fn proj(&self, t: LoraTarget) -> &Proj {
        match t {
            LoraTarget::Query => &self.q,
            LoraTarget::Key => &self.k,
            LoraTarget::Value => &self.v,
            LoraTarget::Output => &self.o,
        }
    }

    fn proj_mut(&mut self, t: LoraTarget) -> &mut Proj {
        match t {
            LoraTarget::Query => &mut self.q,
            LoraTarget::Key => &mut self.k,
            LoraTarget::Value => &mut self.v,
            LoraTarget::Output => &mut self.o,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DualHeadModel<T> {
    config: ModelConfig,
    params: ParamStore<T>,
    tok_emb: ParamId,
    pos_emb: ParamId,
    blocks: Vec<Block>,
    final_ln: Norm,
    lm_head: ParamId,
    cls_fc1: Linear,
    cls_fc2: Linear,
    /// Position in the store where adapter parameters start, if attached.
    lora_start: Option<usize>,
}

/// Handles produced by a tape forward pass.
#[derive(Clone, Copy, Debug)]
pub struct ForwardVars {
    /// Post-final-norm hidden states, `[len, d_model]`.
    pub hidden: Var,
    /// Row `prefix_len - 1` of `hidden`, `[1, d_model]`.
    pub h_n: Var,
}

fn normal<T: Real>(rng: &mut ChaCha8Rng, shape: &[usize], std: f64) -> Tensor<T> {
    let dist = Normal::new(0.0, std).expect("positive std");
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| T::of(dist.sample(rng))).collect()).expect("finite init")
}

fn uniform<T: Real>(rng: &mut ChaCha8Rng, shape: &[usize], bound: f64) -> Tensor<T> {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| T::of(rng.random_range(-bound..bound))).collect())
        .expect("finite init")
}

impl<T: Real> DualHeadModel<T> {
    /// A freshly initialised model without adapters.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        let mut rng = stream(seed, &[0x6d6f_64656c]);
        let mut ps = ParamStore::new();
        let d = config.d_model;
        let std = config.init_std;
        // residual output projections are scaled down with depth
        let out_std = std / Float::sqrt(2.0 * config.n_layers as f64);
        let tok_emb = ps.push("tok_emb", ParamGroup::Base, normal(&mut rng, &[config.vocab_size, d], std));
        let pos_emb = ps.push("pos_emb", ParamGroup::Base, normal(&mut rng, &[config.max_seq_len, d], std));

        let norm = |ps: &mut ParamStore<T>, name: &str| Norm {
            gain: ps.push(format!("{name}.gain"), ParamGroup::Base, Tensor::filled(&[d], T::one())),
            bias: ps.push(format!("{name}.bias"), ParamGroup::Base, Tensor::zeros(&[d])),
        };
        let linear = |ps: &mut ParamStore<T>, rng: &mut ChaCha8Rng, name: &str, din: usize, dout: usize, s: f64| Linear {
            w: ps.push(format!("{name}.weight"), ParamGroup::Base, normal(rng, &[din, dout], s)),
            b: Some(ps.push(format!("{name}.bias"), ParamGroup::Base, Tensor::zeros(&[dout]))),
        };

        let mut blocks = Vec::with_capacity(config.n_layers);
        for l in 0..config.n_layers {
            let p = format!("blocks.{l}");
            let ln1 = norm(&mut ps, &format!("{p}.ln1"));
            let mut proj = |name: &str, s: f64| Proj {
                base: linear(&mut ps, &mut rng, &format!("{p}.attn.{name}"), d, d, s),
                lora: None,
            };
            let q = proj("q", std);
            let k = proj("k", std);
            let v = proj("v", std);
            let o = proj("o", out_std);
            let ln2 = norm(&mut ps, &format!("{p}.ln2"));
            let ff1 = linear(&mut ps, &mut rng, &format!("{p}.mlp.fc1"), d, config.d_ff, std);
            let ff2 = linear(&mut ps, &mut rng, &format!("{p}.mlp.fc2"), config.d_ff, d, out_std);
            blocks.push(Block {
                ln1,
                q,
                k,
                v,
                o,
                ln2,
                ff1,
                ff2,
            });
        }
        let final_ln = norm(&mut ps, "final_ln");
        let lm_head = ps.push(
            "lm_head.weight",
            ParamGroup::Base,
            normal(&mut rng, &[d, config.vocab_size], std),
        );

        // default torch Linear init for the classification MLP
        let h = config.cls_hidden_dim;
        let b1 = 1.0 / Float::sqrt(d as f64);
        let b2 = 1.0 / Float::sqrt(h as f64);
        let cls_fc1 = Linear {
            w: ps.push("cls.fc1.weight", ParamGroup::ClsHead, uniform(&mut rng, &[d, h], b1)),
            b: Some(ps.push("cls.fc1.bias", ParamGroup::ClsHead, uniform(&mut rng, &[h], b1))),
        };
        let cls_fc2 = Linear {
            w: ps.push("cls.fc2.weight", ParamGroup::ClsHead, uniform(&mut rng, &[h, 2], b2)),
            b: Some(ps.push("cls.fc2.bias", ParamGroup::ClsHead, uniform(&mut rng, &[2], b2))),
        };

        Ok(Self {
            config,
            params: ps,
            tok_emb,
            pos_emb,
            blocks,
            final_ln,
            lm_head,
            cls_fc1,
            cls_fc2,
            lora_start: None,
        })
    }

    /// Rebuilds a model from stored parameters. The store must have exactly
    /// the layout `new` (plus `attach_lora` when `with_lora`) produces.
    pub fn from_params(config: ModelConfig, with_lora: bool, params: ParamStore<T>) -> Result<Self, ModelError> {
        let mut model = Self::new(config, 0)?;
        if with_lora {
            model.attach_lora(0)?;
        }
        if model.params.len() != params.len() {
            return Err(ModelError::Layout(format!(
                "expected {} parameters, found {}",
                model.params.len(),
                params.len()
            )));
        }
        for ((_, want), (_, got)) in model.params.iter().zip(params.iter()) {
            if want.name != got.name || want.group != got.group || want.value.shape() != got.value.shape() {
                return Err(ModelError::Layout(format!(
                    "expected {} {:?} {:?}, found {} {:?} {:?}",
                    want.name,
                    want.group,
                    want.value.shape(),
                    got.name,
                    got.group,
                    got.value.shape()
                )));
            }
        }
        model.params = params;
        Ok(model)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn lm_head(&self) -> ParamId {
        self.lm_head
    }

    pub fn cls_layers(&self) -> (Linear, Linear) {
        (self.cls_fc1, self.cls_fc2)
    }

    pub fn has_lora(&self) -> bool {
        self.lora_start.is_some()
    }

    pub fn cast<U: Real>(&self) -> DualHeadModel<U> {
        DualHeadModel {
            config: self.config.clone(),
            params: self.params.cast(),
            tok_emb: self.tok_emb,
            pos_emb: self.pos_emb,
            blocks: self.blocks.clone(),
            final_ln: self.final_ln,
            lm_head: self.lm_head,
            cls_fc1: self.cls_fc1,
            cls_fc2: self.cls_fc2,
            lora_start: self.lora_start,
        }
    }

    /// Adds adapters to every configured target projection. `A` gets the
    /// kaiming-uniform init and `B` starts at zero.
    pub fn attach_lora(&mut self, seed: u64) -> Result<(), ModelError> {
        if self.lora_start.is_some() {
            return Err(ModelError::LoraAttached);
        }
        let mut rng = stream(seed, &[0x6c6f_7261]);
        let start = self.params.len();
        let r = self.config.lora_rank;
        let d = self.config.d_model;
        let bound = 1.0 / Float::sqrt(d as f64);
        let targets = self.config.lora_targets.clone();
        for (l, block) in self.blocks.iter_mut().enumerate() {
            for &t in &targets {
                let name = format!("blocks.{l}.attn.{}", t.short());
                let a = self
                    .params
                    .push(format!("{name}.lora_a"), ParamGroup::Lora, uniform(&mut rng, &[d, r], bound));
                let b = self
                    .params
                    .push(format!("{name}.lora_b"), ParamGroup::Lora, Tensor::zeros(&[r, d]));
                block.proj_mut(t).lora = Some(LoraPair { a, b });
            }
        }
        self.lora_start = Some(start);
        Ok(())
    }

    /// Removes adapters without folding them into the base weights.
    pub fn detach_lora(&mut self) {
        if let Some(start) = self.lora_start.take() {
            for block in &mut self.blocks {
                for t in LoraTarget::ALL {
                    block.proj_mut(t).lora = None;
                }
            }
            self.params.truncate(start);
        }
    }

    /// Adapter-free copy with `W + (alpha/r)·A·B` folded into each adapted
    /// projection. Without adapters this is a plain copy.
    pub fn merged(&self) -> Self {
        let mut out = self.clone();
        let scale = T::of(self.config.lora_scale());
        let d = self.config.d_model;
        let r = self.config.lora_rank;
        for block in &self.blocks {
            for t in LoraTarget::ALL {
                let proj = block.proj(t);
                let Some(lora) = proj.lora else { continue };
                let mut delta = vec![T::zero(); d * d];
                kernels::matmul(
                    self.params.value(lora.a).data(),
                    self.params.value(lora.b).data(),
                    d,
                    r,
                    d,
                    &mut delta,
                );
                let w = out.params.value_mut(proj.base.w).data_mut();
                for (wv, dv) in w.iter_mut().zip(&delta) {
                    *wv += scale * *dv;
                }
            }
        }
        out.detach_lora();
        out
    }

    fn check_tokens(&self, tokens: &[usize]) -> Result<(), ModelError> {
        if tokens.is_empty() {
            return Err(ModelError::Empty);
        }
        if tokens.len() > self.config.max_seq_len {
            return Err(ModelError::SequenceTooLong {
                len: tokens.len(),
                max: self.config.max_seq_len,
            });
        }
        if let Some(&id) = tokens.iter().find(|&&id| id >= self.config.vocab_size) {
            return Err(ModelError::UnknownToken {
                id,
                vocab: self.config.vocab_size,
            });
        }
        Ok(())
    }

    fn linear(&self, tape: &mut Tape<T>, bound: &Bound, lin: Linear, x: Var) -> Result<Var, TensorError> {
        let y = tape.matmul(x, bound.var(lin.w))?;
        match lin.b {
            Some(b) => tape.add(y, bound.var(b)),
            None => Ok(y),
        }
    }

    fn proj(
        &self,
        tape: &mut Tape<T>,
        bound: &Bound,
        proj: &Proj,
        x: Var,
        rng: &mut Option<&mut ChaCha8Rng>,
    ) -> Result<Var, TensorError> {
        let y = self.linear(tape, bound, proj.base, x)?;
        let Some(lora) = proj.lora else { return Ok(y) };
        let xin = match rng {
            Some(r) => tape.dropout(x, self.config.lora_dropout, *r)?,
            None => x,
        };
        let xa = tape.matmul(xin, bound.var(lora.a))?;
        let xab = tape.matmul(xa, bound.var(lora.b))?;
        let delta = tape.scale(xab, T::of(self.config.lora_scale()))?;
        tape.add(y, delta)
    }

    /// Post-final-norm hidden states for `tokens`. Passing an RNG enables
    /// train-mode dropout on adapter inputs.
    pub fn hidden(
        &self,
        tape: &mut Tape<T>,
        bound: &Bound,
        tokens: &[usize],
        mut rng: Option<&mut ChaCha8Rng>,
    ) -> Result<Var, ModelError> {
        self.check_tokens(tokens)?;
        let n = tokens.len();
        let dh = self.config.head_dim();
        let positions: Vec<usize> = (0..n).collect();
        let te = tape.embedding(bound.var(self.tok_emb), tokens)?;
        let pe = tape.embedding(bound.var(self.pos_emb), &positions)?;
        let mut x = tape.add(te, pe)?;
        let mask: Vec<bool> = (0..n * n).map(|i| i % n > i / n).collect();
        let att_scale = T::of(1.0 / Float::sqrt(dh as f64));
        let eps = T::of(LN_EPS);

        for block in &self.blocks {
            let h = tape.layer_norm(x, bound.var(block.ln1.gain), bound.var(block.ln1.bias), eps)?;
            let q = self.proj(tape, bound, &block.q, h, &mut rng)?;
            let k = self.proj(tape, bound, &block.k, h, &mut rng)?;
            let v = self.proj(tape, bound, &block.v, h, &mut rng)?;
            let mut heads = Vec::with_capacity(self.config.n_heads);
            for hh in 0..self.config.n_heads {
                let (lo, hi) = (hh * dh, (hh + 1) * dh);
                let qh = tape.slice_cols(q, lo, hi)?;
                let kh = tape.slice_cols(k, lo, hi)?;
                let vh = tape.slice_cols(v, lo, hi)?;
                let kt = tape.transpose(kh)?;
                let s = tape.matmul(qh, kt)?;
                let s = tape.scale(s, att_scale)?;
                let s = tape.masked_fill(s, &mask, T::of(MASK_FILL))?;
                let p = tape.softmax(s)?;
                heads.push(tape.matmul(p, vh)?);
            }
            let att = tape.concat_cols(&heads)?;
            let att = self.proj(tape, bound, &block.o, att, &mut rng)?;
            x = tape.add(x, att)?;
            let h = tape.layer_norm(x, bound.var(block.ln2.gain), bound.var(block.ln2.bias), eps)?;
            let f = self.linear(tape, bound, block.ff1, h)?;
            let f = tape.gelu(f)?;
            let f = self.linear(tape, bound, block.ff2, f)?;
            x = tape.add(x, f)?;
        }
        Ok(tape.layer_norm(
            x,
            bound.var(self.final_ln.gain),
            bound.var(self.final_ln.bias),
            eps,
        )?)
    }

    /// Hidden states plus `h_n`, the row at `prefix_len - 1`.
    pub fn forward_vars(
        &self,
        tape: &mut Tape<T>,
        bound: &Bound,
        tokens: &[usize],
        prefix_len: usize,
        rng: Option<&mut ChaCha8Rng>,
    ) -> Result<ForwardVars, ModelError> {
        self.check_tokens(tokens)?;
        if prefix_len == 0 || prefix_len > tokens.len() {
            return Err(ModelError::BadPrefix {
                prefix_len,
                len: tokens.len(),
            });
        }
        let hidden = self.hidden(tape, bound, tokens, rng)?;
        let h_n = tape.slice_rows(hidden, prefix_len - 1, prefix_len)?;
        Ok(ForwardVars { hidden, h_n })
    }

    /// Vocabulary logits for each row of `hidden`.
    pub fn lm_logits(&self, tape: &mut Tape<T>, bound: &Bound, hidden: Var) -> Result<Var, ModelError> {
        Ok(tape.matmul(hidden, bound.var(self.lm_head))?)
    }

    /// `[1, 2]` class logits from `h_n`; index 1 is the positive class.
    /// Dropout applies to `h_n` and to the hidden layer when an RNG is given.
    pub fn class_logits_var(
        &self,
        tape: &mut Tape<T>,
        bound: &Bound,
        h_n: Var,
        mut rng: Option<&mut ChaCha8Rng>,
    ) -> Result<Var, ModelError> {
        let p = self.config.cls_dropout;
        let x = match rng.as_deref_mut() {
            Some(r) => tape.dropout(h_n, p, r)?,
            None => h_n,
        };
        let z = self.linear(tape, bound, self.cls_fc1, x)?;
        let z = tape.gelu(z)?;
        let z = match rng {
            Some(r) => tape.dropout(z, p, r)?,
            None => z,
        };
        Ok(self.linear(tape, bound, self.cls_fc2, z)?)
    }

    /// Eval-mode forward: logits for every position and `h_n`.
    pub fn forward(&self, tokens: &[usize], prefix_len: usize) -> Result<(Tensor<T>, Vec<T>), ModelError> {
        let mut tape = Tape::untracked();
        let bound = self.params.bind(&mut tape, |_| false);
        let fv = self.forward_vars(&mut tape, &bound, tokens, prefix_len, None)?;
        let logits = self.lm_logits(&mut tape, &bound, fv.hidden)?;
        Ok((tape.value(logits).clone(), tape.value(fv.h_n).data().to_vec()))
    }

    /// Eval-mode class logits for a hidden vector.
    pub fn class_logits(&self, h_n: &[T]) -> Result<[T; 2], ModelError> {
        let d = self.config.d_model;
        if h_n.len() != d {
            return Err(TensorError::ShapeMismatch {
                op: "class_logits",
                lhs: vec![h_n.len()],
                rhs: vec![d],
            }
            .into());
        }
        let mut tape = Tape::untracked();
        let bound = self.params.bind(&mut tape, |_| false);
        let h = tape.constant(Tensor::new(vec![1, d], h_n.to_vec())?);
        let z = self.class_logits_var(&mut tape, &bound, h, None)?;
        let v = tape.value(z).data();
        Ok([v[0], v[1]])
    }

    /// Eval-mode positive-class probability for an input prefix.
    pub fn class_probability(&self, tokens: &[usize], prefix_len: usize) -> Result<T, ModelError> {
        let mut tape = Tape::untracked();
        let bound = self.params.bind(&mut tape, |_| false);
        let fv = self.forward_vars(&mut tape, &bound, &tokens[..prefix_len.min(tokens.len())], prefix_len, None)?;
        let z = self.class_logits_var(&mut tape, &bound, fv.h_n, None)?;
        let v = tape.value(z).data();
        Ok(positive_probability(v[0], v[1]))
    }
}

/// `softmax([z0, z1])[1]`, computed stably.
pub fn positive_probability<T: Real>(z0: T, z1: T) -> T {
    let mut row = [z0, z1];
    kernels::softmax_row(&mut row);
    row[1]
}
