use serde::{Deserialize, Serialize};

use crate::backbone::ParamStore;
use crate::tensor_ops::Tensor;

/// Adam with bias-corrected moments; defaults β₁ = 0.9, β₂ = 0.999, ε = 1e-8.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Adam {
    pub fn new(learning_rate: f64) -> Self {
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }

    /// Apply one update for every tensor that has a gradient.
    pub fn step(&self, params: &mut ParamStore<f32>, grads: &ParamStore<f32>, state: &mut AdamState) {
        state.step += 1;
        let t = state.step as i32;
        let correction1 = 1.0 - self.beta1.powi(t);
        let correction2 = 1.0 - self.beta2.powi(t);
        for (name, grad) in grads.iter() {
            let Some(param) = params.get_mut(name) else {
                continue;
            };
            if !state.first.contains(name) {
                state.first.insert(name.clone(), Tensor::zeros(grad.shape().to_vec()));
                state.second.insert(name.clone(), Tensor::zeros(grad.shape().to_vec()));
            }
            let m = state.first.get_mut(name).expect("inserted above").data_mut();
            let v = state.second.get_mut(name).expect("inserted above").data_mut();
            for (((p, &g), m), v) in param.data_mut().iter_mut().zip(grad.data()).zip(m).zip(v) {
                let g = f64::from(g);
                let m_new = self.beta1 * f64::from(*m) + (1.0 - self.beta1) * g;
                let v_new = self.beta2 * f64::from(*v) + (1.0 - self.beta2) * g * g;
                *m = m_new as f32;
                *v = v_new as f32;
                let m_hat = m_new / correction1;
                let v_hat = v_new / correction2;
                *p = (f64::from(*p) - self.learning_rate * m_hat / (v_hat.sqrt() + self.epsilon)) as f32;
            }
        }
    }
}

/// First and second moment estimates plus the step counter.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub first: ParamStore<f32>,
    pub second: ParamStore<f32>,
}
