//! ADAM with bias correction over the model's parameter groups.

use super::{MdnGradients, MdnModel, ModelDims};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// First/second moment estimates plus the step counter.
#[derive(Debug, Clone)]
pub struct AdamOptimizer {
    config: AdamConfig,
    step: u64,
    first: MdnGradients,
    second: MdnGradients,
}

impl AdamOptimizer {
    pub fn new(dims: ModelDims) -> Self {
        Self::with_config(dims, AdamConfig::default())
    }

    pub fn with_config(dims: ModelDims, config: AdamConfig) -> Self {
        Self {
            config,
            step: 0,
            first: MdnGradients::zeros(dims),
            second: MdnGradients::zeros(dims),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// One parameter update:
    /// m ← β₁m + (1−β₁)g, v ← β₂v + (1−β₂)g²,
    /// θ ← θ − lr · m̂ / (√v̂ + ε) with m̂ = m/(1−β₁ᵗ), v̂ = v/(1−β₂ᵗ).
    pub fn step(&mut self, model: &mut MdnModel, gradients: &MdnGradients, learning_rate: f64) {
        self.step += 1;
        let t = self.step as i32;
        let c = self.config;
        let bias1 = 1.0 - c.beta1.powi(t);
        let bias2 = 1.0 - c.beta2.powi(t);
        for (((_, theta), (_, grad)), ((_, m), (_, v))) in model
            .params_mut()
            .into_iter()
            .zip(gradients.params())
            .zip(self.first.params_mut().into_iter().zip(self.second.params_mut()))
        {
            for k in 0..theta.len() {
                let g = grad[k];
                m[k] = c.beta1 * m[k] + (1.0 - c.beta1) * g;
                v[k] = c.beta2 * v[k] + (1.0 - c.beta2) * g * g;
                let m_hat = m[k] / bias1;
                let v_hat = v[k] / bias2;
                theta[k] -= learning_rate * m_hat / (v_hat.sqrt() + c.epsilon);
            }
        }
    }
}
