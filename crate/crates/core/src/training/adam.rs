//! Bias-corrected Adam.

use crate::error::{invalid, Result};
use crate::params::Parameters;

#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

impl AdamState {
    /// Zero moments shaped like `params`, with `lr = 1e-4`, `β = (0.9,
    /// 0.999)` and `ε = 1e-8`.
    pub fn new(params: &dyn Parameters) -> Self {
        let shapes: Vec<Vec<f64>> = params.tensors().iter().map(|(_, t)| vec![0.0; t.len()]).collect();
        Self {
            step: 0,
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            v: shapes.clone(),
            m: shapes,
        }
    }

    pub fn with_lr(mut self, lr: f64) -> Self {
        self.lr = lr;
        self
    }
}

pub fn adam_step(params: &mut dyn Parameters, grads: &dyn Parameters, state: &mut AdamState) -> Result<()> {
    let g = grads.tensors();
    let mut p = params.tensors_mut();
    if g.len() != p.len()
        || state.m.len() != p.len()
        || p.iter().zip(&g).zip(&state.m).any(|((a, b), m)| a.1.len() != b.1.len() || m.len() != a.1.len())
    {
        return Err(invalid("parameter, gradient and moment shapes differ"));
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - state.beta1.powi(t);
    let bc2 = 1.0 - state.beta2.powi(t);
    for (((pt, gt), mt), vt) in p.iter_mut().zip(&g).zip(&mut state.m).zip(&mut state.v) {
        for (((w, gi), mi), vi) in pt.1.iter_mut().zip(gt.1.iter()).zip(mt.iter_mut()).zip(vt.iter_mut()) {
            *mi = state.beta1 * *mi + (1.0 - state.beta1) * gi;
            *vi = state.beta2 * *vi + (1.0 - state.beta2) * gi * gi;
            let mhat = *mi / bc1;
            let vhat = *vi / bc2;
            *w -= state.lr * mhat / (vhat.sqrt() + state.eps);
        }
    }
    Ok(())
}
