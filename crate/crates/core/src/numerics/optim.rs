use serde::{Deserialize, Serialize};

use super::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// L2 penalty added to the gradient before the moment updates.
    pub weight_decay: f64,
}

impl AdamConfig {
    pub fn new(lr: f64, weight_decay: f64) -> Self {
        AdamConfig { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay }
    }
}

/// Adam state for a fixed, ordered list of parameter tensors.
#[derive(Debug, Clone)]
pub struct Adam {
    config: AdamConfig,
    step: i32,
    first: Vec<Tensor>,
    second: Vec<Tensor>,
}

impl Adam {
    pub fn new(config: AdamConfig, params: &[&Tensor]) -> Self {
        Adam {
            config,
            step: 0,
            first: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
            second: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
        }
    }

    /// Applies one update. `params` and `grads` must be in construction order.
    pub fn step(&mut self, params: &mut [&mut Tensor], grads: &[Tensor]) {
        assert_eq!(params.len(), self.first.len(), "Adam parameter count changed");
        assert_eq!(grads.len(), self.first.len(), "Adam gradient count mismatch");
        self.step += 1;
        let AdamConfig { lr, beta1, beta2, eps, weight_decay } = self.config;
        let bc1 = 1.0 - beta1.powi(self.step);
        let bc2 = 1.0 - beta2.powi(self.step);
        for (((param, grad), m), v) in params.iter_mut().zip(grads).zip(&mut self.first).zip(&mut self.second) {
            assert_eq!(param.shape(), grad.shape(), "Adam gradient shape mismatch");
            let moments = m.data_mut().iter_mut().zip(v.data_mut().iter_mut());
            for ((p, &g), (mi, vi)) in param.data_mut().iter_mut().zip(grad.data()).zip(moments) {
                let g = g + weight_decay * *p;
                *mi = beta1 * *mi + (1.0 - beta1) * g;
                *vi = beta2 * *vi + (1.0 - beta2) * g * g;
                *p -= lr * (*mi / bc1) / ((*vi / bc2).sqrt() + eps);
            }
        }
    }
}
