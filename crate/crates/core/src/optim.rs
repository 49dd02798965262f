//! Adam with either decoupled or L2 (gradient-coupled) weight decay.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamHyper {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// How weight decay enters the update.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum WeightDecay {
    /// `param -= lr * wd * param` before the Adam update.
    #[default]
    Decoupled,
    /// `wd * param` added to the gradient, so the decay is rescaled by the
    /// second-moment estimate like any other gradient term.
    Coupled,
}

/// Moment accumulators for one parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
    pub hyper: AdamHyper,
}

impl AdamState {
    pub fn new(len: usize, hyper: AdamHyper) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
            step: 0,
            hyper,
        }
    }
}

/// One bias-corrected Adam update. Decay `param -= lr * wd * param` is
/// applied first, independent of the gradient.
pub fn adam_step(params: &mut [f64], grads: &[f64], state: &mut AdamState, lr: f64, weight_decay: f64) -> Result<()> {
    adam_update(params, grads, state, lr, weight_decay, WeightDecay::Decoupled)
}

/// Adam update with L2 decay folded into the gradient: `g + wd * param`.
pub fn adam_step_l2(params: &mut [f64], grads: &[f64], state: &mut AdamState, lr: f64, weight_decay: f64) -> Result<()> {
    adam_update(params, grads, state, lr, weight_decay, WeightDecay::Coupled)
}

pub fn adam_update(
    params: &mut [f64],
    grads: &[f64],
    state: &mut AdamState,
    lr: f64,
    weight_decay: f64,
    mode: WeightDecay,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::Shape(format!(
            "adam: params {}, grads {}, state {}",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    state.step += 1;
    let AdamHyper { beta1, beta2, eps } = state.hyper;
    let t = state.step as i32;
    let c1 = 1.0 / (1.0 - beta1.powi(t));
    let c2 = 1.0 / (1.0 - beta2.powi(t));
    let (decay, l2) = match mode {
        WeightDecay::Decoupled => (1.0 - lr * weight_decay, 0.0),
        WeightDecay::Coupled => (1.0, weight_decay),
    };
    for (((p, &g), m), v) in params.iter_mut().zip(grads).zip(&mut state.m).zip(&mut state.v) {
        let g = g + l2 * *p;
        *p *= decay;
        *m = beta1 * *m + (1.0 - beta1) * g;
        *v = beta2 * *v + (1.0 - beta2) * g * g;
        *p -= lr * (*m * c1) / ((*v * c2).sqrt() + eps);
    }
    Ok(())
}
