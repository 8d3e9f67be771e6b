//! Bias-corrected Adam over a [`ParamStore`].

use serde::{Deserialize, Serialize};

use crate::matrix::Matrix;
use crate::tape::ParamStore;

/// Adam hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamParams {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        AdamParams { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Per-parameter moment estimates plus the step counter.
#[derive(Debug, Clone)]
pub struct AdamState {
    hyper: AdamParams,
    first: Vec<Matrix>,
    second: Vec<Matrix>,
    step: u64,
}

impl AdamState {
    /// Moments are allocated to match `store`; the parameter set must not
    /// change afterwards.
    pub fn new(store: &ParamStore, hyper: AdamParams) -> Self {
        let first = store
            .iter()
            .map(|(_, p)| Matrix::zeros(p.value.rows(), p.value.cols()))
            .collect::<Vec<_>>();
        let second = first.clone();
        AdamState { hyper, first, second, step: 0 }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn hyper(&self) -> AdamParams {
        self.hyper
    }
}

/// One bias-corrected Adam update from the accumulated gradients; gradients
/// are zeroed afterwards.
pub fn adam_step(store: &mut ParamStore, state: &mut AdamState) {
    assert_eq!(store.len(), state.first.len(), "optimizer state does not match store");
    state.step += 1;
    let t = state.step as i32;
    let AdamParams { lr, beta1, beta2, eps } = state.hyper;
    let bias1 = 1.0 - beta1.powi(t);
    let bias2 = 1.0 - beta2.powi(t);

    for (idx, id) in store.ids().into_iter().enumerate() {
        let grad = store.grad(id).clone();
        let m = &mut state.first[idx];
        let v = &mut state.second[idx];
        let len = grad.data().len();
        let value = store.value_mut(id);
        for i in 0..len {
            let g = grad.data()[i];
            let mi = beta1 * m.data()[i] + (1.0 - beta1) * g;
            let vi = beta2 * v.data()[i] + (1.0 - beta2) * g * g;
            m.data_mut()[i] = mi;
            v.data_mut()[i] = vi;
            let m_hat = mi / bias1;
            let v_hat = vi / bias2;
            value.data_mut()[i] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    store.zero_grads();
}
