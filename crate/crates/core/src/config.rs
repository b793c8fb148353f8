use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Hyperparameters of one pre-training + distillation run.
///
/// Defaults: α = 1, τ = 1.2, m = 0.3, lr = 0.01, weight decay 5e-4, 500
/// epochs, hidden width 64.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Weight of the distillation term.
    pub alpha: f64,
    /// Softmax temperature applied to teacher and student inside the KL term.
    pub tau_kd: f64,
    /// Temperature of the Gumbel-sigmoid used for teacher selection.
    pub tau_gumbel: f64,
    /// Momentum rate of the selecting module.
    pub m: f64,
    pub lr: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub seed: u64,
    pub pretrain_epochs: usize,
    pub probe_epochs: usize,
    pub hidden: usize,
    /// Train the selection MLP through the straight-through Gumbel
    /// estimator instead of keeping it at its initialization.
    pub train_mlp: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            alpha: 1.0,
            tau_kd: 1.2,
            tau_gumbel: 1.0,
            m: 0.3,
            lr: 0.01,
            weight_decay: 5e-4,
            epochs: 500,
            seed: 0,
            pretrain_epochs: 200,
            probe_epochs: 200,
            hidden: 64,
            train_mlp: false,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        let checks = [
            (self.alpha >= 0.0 && self.alpha.is_finite(), "alpha must be finite and >= 0"),
            (self.tau_kd > 0.0 && self.tau_kd.is_finite(), "tau_kd must be positive"),
            (self.tau_gumbel > 0.0 && self.tau_gumbel.is_finite(), "tau_gumbel must be positive"),
            ((0.0..=1.0).contains(&self.m), "m must lie in [0, 1]"),
            (self.lr > 0.0 && self.lr.is_finite(), "lr must be positive"),
            (self.weight_decay >= 0.0 && self.weight_decay.is_finite(), "weight_decay must be >= 0"),
            (self.epochs >= 1, "epochs must be at least 1"),
            (self.probe_epochs >= 1, "probe_epochs must be at least 1"),
            (self.hidden >= 1, "hidden must be at least 1"),
        ];
        match checks.iter().find(|(ok, _)| !ok) {
            Some((_, msg)) => Err(Error::invalid(*msg)),
            None => Ok(()),
        }
    }
}
