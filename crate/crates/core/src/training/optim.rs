use alloc::vec::Vec;

use num_traits::Float;

use super::TrainConfig;
use crate::model::ParamStore;
use crate::tensor::{Real, Tensor};

/// Linear warmup from 0 to `peak` over `warmup` steps, then linear decay to
/// 0 at `total`.
pub fn lr_at(step: usize, warmup: usize, total: usize, peak: f64) -> f64 {
    if step < warmup {
        return peak * step as f64 / warmup as f64;
    }
    let span = total.saturating_sub(warmup);
    if span == 0 {
        return peak;
    }
    peak * (total.saturating_sub(step) as f64 / span as f64).max(0.0)
}

/// Rescales every gradient so that their joint L2 norm is at most `max`.
/// Returns the norm before clipping.
pub fn clip_global_norm<T: Real>(grads: &mut [Option<Tensor<T>>], max: f64) -> f64 {
    let sq: f64 = grads
        .iter()
        .flatten()
        .flat_map(|g| g.data())
        .map(|&v| {
            let v = v.as_f64();
            v * v
        })
        .sum();
    let norm = Float::sqrt(sq);
    if norm > max {
        let c = T::of(max / (norm + 1e-6));
        for g in grads.iter_mut().flatten() {
            g.data_mut().iter_mut().for_each(|v| *v *= c);
        }
    }
    norm
}

/// Adam with decoupled weight decay. Decay applies to matrices only;
/// biases and norm parameters are exempt.
#[derive(Clone, Debug)]
pub struct AdamW<T> {
    m: Vec<Tensor<T>>,
    v: Vec<Tensor<T>>,
    decays: Vec<bool>,
    t: i32,
    beta1: f64,
    beta2: f64,
    eps: f64,
    weight_decay: f64,
}

impl<T: Real> AdamW<T> {
    pub fn new(params: &ParamStore<T>, config: &TrainConfig) -> Self {
        let zeros: Vec<Tensor<T>> = params.iter().map(|(_, p)| Tensor::zeros(p.value.shape())).collect();
        Self {
            m: zeros.clone(),
            v: zeros,
            decays: params.iter().map(|(_, p)| p.value.shape().len() == 2).collect(),
            t: 0,
            beta1: config.beta1,
            beta2: config.beta2,
            eps: config.adam_eps,
            weight_decay: config.weight_decay,
        }
    }

    pub fn steps_taken(&self) -> i32 {
        self.t
    }

    /// One update. Parameters whose gradient is `None` are left untouched,
    /// including by weight decay.
    pub fn step(&mut self, params: &mut ParamStore<T>, grads: &[Option<Tensor<T>>], lr: f64) {
        self.t += 1;
        let bc1 = 1.0 - Float::powi(self.beta1, self.t);
        let bc2 = 1.0 - Float::powi(self.beta2, self.t);
        let (b1, b2) = (T::of(self.beta1), T::of(self.beta2));
        let (one_b1, one_b2) = (T::of(1.0 - self.beta1), T::of(1.0 - self.beta2));
        let step_size = T::of(lr / bc1);
        let inv_sqrt_bc2 = T::of(1.0 / Float::sqrt(bc2));
        let eps = T::of(self.eps);
        let shrink = T::of(1.0 - lr * self.weight_decay);
        let ids: Vec<_> = params.iter().map(|(id, _)| id).collect();
        for id in ids {
            let i = id.index();
            let Some(g) = grads[i].as_ref() else { continue };
            let p = params.value_mut(id).data_mut();
            let m = self.m[i].data_mut();
            let v = self.v[i].data_mut();
            if self.decays[i] && self.weight_decay > 0.0 {
                p.iter_mut().for_each(|x| *x *= shrink);
            }
            for (((x, &gi), mi), vi) in p.iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
                *mi = b1 * *mi + one_b1 * gi;
                *vi = b2 * *vi + one_b2 * gi * gi;
                let denom = vi.sqrt() * inv_sqrt_bc2 + eps;
                *x -= step_size * *mi / denom;
            }
        }
    }
}
