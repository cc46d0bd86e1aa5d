//! Incremental decoding with a key/value cache.
//!
//! `step` repeats the arithmetic of the tape forward pass for one new row, in
//! the same reduction order, so cached logits equal full-sequence logits.

use alloc::vec;
use alloc::vec::Vec;

use num_traits::Float;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{DualHeadModel, Linear, ModelError, Proj, LN_EPS};
use crate::rng::ChaCha8Rng;
use crate::tensor::{kernels, Real};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Decoding {
    Greedy,
    Sample { temperature: f64 },
}

/// Per-layer keys and values for the positions decoded so far.
#[derive(Clone, Debug)]
pub struct KvCache<T> {
    keys: Vec<Vec<T>>,
    values: Vec<Vec<T>>,
    len: usize,
}

impl<T: Real> KvCache<T> {
    pub fn new(n_layers: usize) -> Self {
        Self {
            keys: vec![Vec::new(); n_layers],
            values: vec![Vec::new(); n_layers],
            len: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }
}

impl<T: Real> DualHeadModel<T> {
    fn linear_row(&self, lin: Linear, x: &[T], dout: usize) -> Vec<T> {
        let mut out = vec![T::zero(); dout];
        kernels::matmul(x, self.params.value(lin.w).data(), 1, x.len(), dout, &mut out);
        if let Some(b) = lin.b {
            for (o, &bv) in out.iter_mut().zip(self.params.value(b).data()) {
                *o += bv;
            }
        }
        out
    }

    fn proj_row(&self, proj: &Proj, x: &[T]) -> Vec<T> {
        let d = self.config.d_model;
        let mut y = self.linear_row(proj.base, x, d);
        if let Some(lora) = proj.lora {
            let r = self.config.lora_rank;
            let mut xa = vec![T::zero(); r];
            kernels::matmul(x, self.params.value(lora.a).data(), 1, d, r, &mut xa);
            let mut xab = vec![T::zero(); d];
            kernels::matmul(&xa, self.params.value(lora.b).data(), 1, r, d, &mut xab);
            let s = T::of(self.config.lora_scale());
            for (yv, &dv) in y.iter_mut().zip(&xab) {
                *yv += dv * s;
            }
        }
        y
    }

    fn norm_row(&self, x: &[T], gain: super::ParamId, bias: super::ParamId) -> Vec<T> {
        let mut xhat = vec![T::zero(); x.len()];
        let mut out = vec![T::zero(); x.len()];
        kernels::layer_norm_row(
            x,
            self.params.value(gain).data(),
            self.params.value(bias).data(),
            T::of(LN_EPS),
            &mut xhat,
            &mut out,
        );
        out
    }

    /// Feeds one token at the next free position and returns its
    /// post-final-norm hidden state.
    pub fn step(&self, cache: &mut KvCache<T>, token: usize) -> Result<Vec<T>, ModelError> {
        let pos = cache.len;
        if pos >= self.config.max_seq_len {
            return Err(ModelError::SequenceTooLong {
                len: pos + 1,
                max: self.config.max_seq_len,
            });
        }
        if token >= self.config.vocab_size {
            return Err(ModelError::UnknownToken {
                id: token,
                vocab: self.config.vocab_size,
            });
        }
        let d = self.config.d_model;
        let dh = self.config.head_dim();
        let n = pos + 1;
        let att_scale = T::of(1.0 / Float::sqrt(dh as f64));
        let mut x: Vec<T> = self
            .params
            .value(self.tok_emb)
            .row(token)
            .iter()
            .zip(self.params.value(self.pos_emb).row(pos))
            .map(|(&a, &b)| a + b)
            .collect();

        for (l, block) in self.blocks.iter().enumerate() {
            let h = self.norm_row(&x, block.ln1.gain, block.ln1.bias);
            let q = self.proj_row(&block.q, &h);
            cache.keys[l].extend(self.proj_row(&block.k, &h));
            cache.values[l].extend(self.proj_row(&block.v, &h));
            let keys = &cache.keys[l];
            let values = &cache.values[l];
            let mut att = Vec::with_capacity(d);
            let mut scores = vec![T::zero(); n];
            for hh in 0..self.config.n_heads {
                let (lo, hi) = (hh * dh, (hh + 1) * dh);
                for (j, s) in scores.iter_mut().enumerate() {
                    let mut acc = T::zero();
                    for (&qv, &kv) in q[lo..hi].iter().zip(&keys[j * d + lo..j * d + hi]) {
                        acc += qv * kv;
                    }
                    *s = acc * att_scale;
                }
                kernels::softmax_row(&mut scores);
                let mut out = vec![T::zero(); dh];
                for (j, &p) in scores.iter().enumerate() {
                    for (o, &vv) in out.iter_mut().zip(&values[j * d + lo..j * d + hi]) {
                        *o += p * vv;
                    }
                }
                att.extend(out);
            }
            let att = self.proj_row(&block.o, &att);
            for (xv, &a) in x.iter_mut().zip(&att) {
                *xv += a;
            }
            let h = self.norm_row(&x, block.ln2.gain, block.ln2.bias);
            let mut f = self.linear_row(block.ff1, &h, self.config.d_ff);
            f.iter_mut().for_each(|v| *v = kernels::gelu(*v));
            let f = self.linear_row(block.ff2, &f, d);
            for (xv, &fv) in x.iter_mut().zip(&f) {
                *xv += fv;
            }
        }
        cache.len += 1;
        Ok(self.norm_row(&x, self.final_ln.gain, self.final_ln.bias))
    }

    /// LM-head logits for one hidden row.
    pub fn lm_row(&self, hidden: &[T]) -> Vec<T> {
        let v = self.config.vocab_size;
        let mut out = vec![T::zero(); v];
        kernels::matmul(hidden, self.params.value(self.lm_head).data(), 1, hidden.len(), v, &mut out);
        out
    }

    /// Feeds `prompt` through a fresh cache. Returns the cache and the
    /// hidden state of the last prompt token, which is `h_n` when the
    /// prompt is an input prefix.
    pub fn prime(&self, prompt: &[usize]) -> Result<(KvCache<T>, Vec<T>), ModelError> {
        self.check_tokens(prompt)?;
        let mut cache = KvCache::new(self.config.n_layers);
        let mut hidden = Vec::new();
        for &t in prompt {
            hidden = self.step(&mut cache, t)?;
        }
        Ok((cache, hidden))
    }

    /// Continues from a primed cache. See [`generate`](Self::generate).
    pub fn continue_generation(
        &self,
        cache: &mut KvCache<T>,
        mut hidden: Vec<T>,
        max_new: usize,
        decoding: Decoding,
        stop: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Vec<usize>, ModelError> {
        let mut out = Vec::new();
        while out.len() < max_new {
            let logits = self.lm_row(&hidden);
            let next = pick(&logits, decoding, rng);
            out.push(next);
            if next == stop || cache.len() >= self.config.max_seq_len {
                break;
            }
            hidden = self.step(cache, next)?;
        }
        Ok(out)
    }

    /// Continues `prompt` until `stop` is produced, `max_new` tokens have
    /// been emitted, or the position table is exhausted. The returned
    /// tokens exclude the prompt and include `stop` when it was produced.
    pub fn generate(
        &self,
        prompt: &[usize],
        max_new: usize,
        decoding: Decoding,
        stop: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Vec<usize>, ModelError> {
        let (mut cache, hidden) = self.prime(prompt)?;
        self.continue_generation(&mut cache, hidden, max_new, decoding, stop, rng)
    }
}

/// Greedy picks the first maximal logit; sampling draws from
/// `softmax(logits / temperature)`.
pub(crate) fn pick<T: Real>(logits: &[T], decoding: Decoding, rng: &mut ChaCha8Rng) -> usize {
    match decoding {
        Decoding::Greedy => argmax(logits),
        Decoding::Sample { temperature } if temperature <= 0.0 => argmax(logits),
        Decoding::Sample { temperature } => {
            let mut p: Vec<f64> = logits.iter().map(|v| v.as_f64() / temperature).collect();
            kernels::softmax_row(&mut p);
            let u: f64 = rng.random();
            let mut acc = 0.0;
            for (i, &pi) in p.iter().enumerate() {
                acc += pi;
                if u < acc {
                    return i;
                }
            }
            p.len() - 1
        }
    }
}

fn argmax<T: Real>(v: &[T]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}
