//! Adam with decoupled weight decay, cosine learning-rate decay, and global
//! gradient-norm clipping.

use crate::model::ParamStore;
use crate::num::Scalar;

#[derive(Debug, Clone)]
pub struct AdamW<T> {
    m: Vec<T>,
    v: Vec<T>,
    t: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    /// Decay applies only to matrices; biases and embeddings of rank 1 skip it.
    decay: Vec<bool>,
}

impl<T: Scalar> AdamW<T> {
    pub fn new(params: &ParamStore<T>, weight_decay: f64) -> Self {
        let n = params.data.len();
        let mut decay = vec![false; n];
        for spec in &params.layout.specs {
            if spec.shape.len() >= 2 {
                for d in decay.iter_mut().skip(spec.offset).take(spec.len) {
                    *d = true;
                }
            }
        }
        Self {
            m: vec![T::zero(); n],
            v: vec![T::zero(); n],
            t: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            decay,
        }
    }

    pub fn step(&mut self, params: &mut ParamStore<T>, grads: &ParamStore<T>, lr: f64) {
        self.t += 1;
        let b1 = T::of(self.beta1);
        let b2 = T::of(self.beta2);
        let one = T::one();
        let eps = T::of(self.eps);
        let lr_t = T::of(lr);
        let wd = T::of(lr * self.weight_decay);
        let bc1 = T::of(1.0 - self.beta1.powi(self.t as i32));
        let bc2 = T::of(1.0 - self.beta2.powi(self.t as i32));
        for i in 0..params.data.len() {
            let g = grads.data[i];
            self.m[i] = b1 * self.m[i] + (one - b1) * g;
            self.v[i] = b2 * self.v[i] + (one - b2) * g * g;
            let mhat = self.m[i] / bc1;
            let vhat = self.v[i] / bc2;
            let mut p = params.data[i];
            if self.decay[i] {
                p = p - wd * p;
            }
            params.data[i] = p - lr_t * mhat / (vhat.sqrt() + eps);
        }
    }
}

/// Cosine decay from `base` to `base * min_frac` after a linear warmup.
pub fn cosine_lr(step: usize, total: usize, base: f64, warmup: usize, min_frac: f64) -> f64 {
    if warmup > 0 && step < warmup {
        return base * (step + 1) as f64 / warmup as f64;
    }
    let progress = (step - warmup) as f64 / (total.saturating_sub(warmup)).max(1) as f64;
    let cos = 0.5 * (1.0 + (std::f64::consts::PI * progress.min(1.0)).cos());
    base * (min_frac + (1.0 - min_frac) * cos)
}

/// Scale gradients so their global L2 norm is at most `max_norm`.
/// Returns the pre-clip norm.
pub fn clip_grad_norm<T: Scalar>(grads: &mut ParamStore<T>, max_norm: f64) -> f64 {
    let sq: f64 = grads.data.iter().map(|g| g.cast_f64() * g.cast_f64()).sum();
    let norm = sq.sqrt();
    if norm > max_norm && norm > 0.0 {
        let scale = T::of(max_norm / norm);
        for g in &mut grads.data {
            *g = *g * scale;
        }
    }
    norm
}
