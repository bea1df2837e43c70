//! Adaptive-moment optimizer with bias correction.

use std::sync::Arc;

use super::{AutodiffError, Result, Tensor};

#[derive(Debug, Clone, Copy)]
pub struct AdamHyper {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        AdamHyper { lr: 5e-4, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

impl AdamHyper {
    pub fn with_lr(lr: f64) -> Self {
        AdamHyper { lr, ..Default::default() }
    }
}

/// Per-parameter first/second moment accumulators plus the step counter.
pub struct AdamState {
    hyper: AdamHyper,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: u64,
}

impl AdamState {
    pub fn new(hyper: AdamHyper, params: &[Tensor]) -> AdamState {
        AdamState {
            hyper,
            m: params.iter().map(|p| vec![0.0; p.numel()]).collect(),
            v: params.iter().map(|p| vec![0.0; p.numel()]).collect(),
            t: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    pub fn hyper(&self) -> AdamHyper {
        self.hyper
    }

    /// One bias-corrected update of `params` in place. `lr_scale` multiplies
    /// the base learning rate (used by warmup/decay schedules).
    pub fn step(&mut self, params: &mut [Tensor], grads: &[&Tensor], lr_scale: f64) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != params.len() {
            return Err(AutodiffError::AdamShape(params.len().min(grads.len())));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.shape() != g.shape() || p.numel() != self.m[i].len() {
                return Err(AutodiffError::AdamShape(i));
            }
        }
        self.t += 1;
        let h = self.hyper;
        let lr = h.lr * lr_scale;
        let bc1 = 1.0 - h.beta1.powi(self.t as i32);
        let bc2 = 1.0 - h.beta2.powi(self.t as i32);
        for ((param, grad), (m, v)) in
            params.iter_mut().zip(grads).zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            let data = param_data_mut(param);
            for (((pv, gv), mv), vv) in data.iter_mut().zip(grad.data()).zip(m.iter_mut()).zip(v.iter_mut())
            {
                *mv = h.beta1 * *mv + (1.0 - h.beta1) * gv;
                *vv = h.beta2 * *vv + (1.0 - h.beta2) * gv * gv;
                let mhat = *mv / bc1;
                let vhat = *vv / bc2;
                *pv -= lr * mhat / (vhat.sqrt() + h.eps);
            }
        }
        Ok(())
    }
}

/// Mutable access to a parameter tensor's storage. Clones the buffer when it
/// is still shared with tape snapshots from the last iteration.
fn param_data_mut(t: &mut Tensor) -> &mut Vec<f64> {
    Arc::make_mut(&mut t.data)
}
