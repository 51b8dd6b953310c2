//! Learning-rate schedule and AdamW.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{Gradients, ParamStore, Tensor};

/// Shape of the schedule after warmup.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decay {
    #[default]
    Constant,
    Linear,
}

/// Linear warmup from 0 to `base_lr` over the first `warmup_frac · total`
/// steps, then constant (or linear decay to zero at `total`).
pub fn lr_at_step(step: u64, total: u64, base_lr: f64, warmup_frac: f64, decay: Decay) -> f64 {
    let step = step.min(total) as f64;
    let total = total as f64;
    let warm = warmup_frac * total;
    if step < warm {
        return base_lr * step / warm;
    }
    match decay {
        Decay::Constant => base_lr,
        Decay::Linear if total > warm => base_lr * (total - step) / (total - warm),
        Decay::Linear => base_lr,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamW {
    fn default() -> Self {
        AdamW {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

/// Moments and per-parameter update counts, aligned with the store's order.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
    pub t: Vec<u64>,
    pub step: u64,
}

impl OptimizerState {
    pub fn new(store: &ParamStore) -> Self {
        let zeros = || store.iter().map(|(_, p)| Tensor::zeros(p.value.shape())).collect();
        OptimizerState {
            m: zeros(),
            v: zeros(),
            t: vec![0; store.len()],
            step: 0,
        }
    }
}

impl AdamW {
    /// Updates every parameter present in `grads` and leaves the others
    /// untouched. Aborts before any change if a gradient is not finite.
    pub fn step(
        &self,
        store: &mut ParamStore,
        state: &mut OptimizerState,
        grads: &Gradients,
        lr: f64,
    ) -> Result<()> {
        for (id, g) in grads.iter() {
            if !g.all_finite() {
                return Err(Error::NumericFault(format!(
                    "non-finite gradient for {}",
                    store.get(id).name
                )));
            }
        }
        for (id, g) in grads.iter() {
            let i = id.index();
            state.t[i] += 1;
            let t = state.t[i] as i32;
            let bc1 = 1.0 - self.beta1.powi(t);
            let bc2 = 1.0 - self.beta2.powi(t);
            let p = store.get_mut(id);
            let shrink = if p.decay { 1.0 - lr * self.weight_decay } else { 1.0 };
            let m = state.m[i].data_mut();
            let v = state.v[i].data_mut();
            for (((w, &gi), mi), vi) in p.value.data_mut().iter_mut().zip(g.data()).zip(m).zip(v) {
                *mi = self.beta1 * *mi + (1.0 - self.beta1) * gi;
                *vi = self.beta2 * *vi + (1.0 - self.beta2) * gi * gi;
                let mhat = *mi / bc1;
                let vhat = *vi / bc2;
                *w *= shrink;
                *w -= lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
        state.step += 1;
        store.zero_grad();
        Ok(())
    }
}
