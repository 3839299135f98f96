//! Adam with bias correction and optional L2 weight decay folded into the
//! gradient before the moment updates.

use crate::error::{Error, Result};

/// Adam hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamParams {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamParams {
    pub fn with_lr(lr: f64) -> AdamParams {
        AdamParams {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First/second moment accumulators for a fixed list of parameter tensors,
/// plus the shared step count for bias correction.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub hyper: AdamParams,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamState {
    /// `shapes` lists the flat length of every parameter tensor, in the
    /// order they will be passed to [`adam_step`].
    pub fn new(hyper: AdamParams, shapes: &[usize]) -> AdamState {
        AdamState {
            hyper,
            step: 0,
            m: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            v: shapes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.hyper.lr = lr;
    }

    pub fn lr(&self) -> f64 {
        self.hyper.lr
    }
}

/// One Adam update over all parameter tensors. `params` and `grads` must
/// match the shapes the state was built with. The L2 term `weight_decay *
/// param` is added to each gradient before the moment updates. Non-finite
/// gradients abort with a poisoned-gradient error before any state changes.
pub fn adam_step(
    state: &mut AdamState,
    params: &mut [&mut [f64]],
    grads: &[&[f64]],
    weight_decay: f64,
) -> Result<()> {
    if params.len() != state.m.len() || grads.len() != state.m.len() {
        return Err(Error::contract(format!(
            "adam_step: expected {} tensors, got {} params and {} grads",
            state.m.len(),
            params.len(),
            grads.len()
        )));
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.len() != state.m[i].len() || g.len() != state.m[i].len() {
            return Err(Error::contract(format!(
                "adam_step: tensor {i} length mismatch"
            )));
        }
        if g.iter().any(|v| !v.is_finite()) {
            return Err(Error::PoisonedGradient(format!("tensor {i}")));
        }
    }

    state.step += 1;
    let t = state.step;
    let AdamParams {
        lr,
        beta1,
        beta2,
        eps,
    } = state.hyper;
    let bc1 = 1.0 - beta1.powi(t as i32);
    let bc2 = 1.0 - beta2.powi(t as i32);

    for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
        let m = &mut state.m[i];
        let v = &mut state.v[i];
        for j in 0..p.len() {
            let grad = g[j] + weight_decay * p[j];
            m[j] = beta1 * m[j] + (1.0 - beta1) * grad;
            v[j] = beta2 * v[j] + (1.0 - beta2) * grad * grad;
            let m_hat = m[j] / bc1;
            let v_hat = v[j] / bc2;
            p[j] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}
