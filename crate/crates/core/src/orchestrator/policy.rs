use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::StepParams;

/// Optimization settings shared by both networks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerPolicy {
    pub batch_size: usize,
    pub lr: f64,
    /// The learning rate is divided by `lr_decay_factor` every `lr_decay_every` epochs.
    pub lr_decay_every: usize,
    pub lr_decay_factor: f64,
    pub weight_decay: f64,
    /// Adam first-moment coefficient.
    pub momentum: f64,
    pub beta2: f64,
    pub eps: f64,
    pub epochs: usize,
    /// Linear warmup length in optimizer steps, applied in iteration 1 only.
    pub warmup_steps: u64,
}

impl Default for OptimizerPolicy {
    fn default() -> Self {
        OptimizerPolicy {
            batch_size: 8,
            lr: 1e-4,
            lr_decay_every: 10,
            lr_decay_factor: 10.0,
            weight_decay: 5e-4,
            momentum: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            epochs: 30,
            warmup_steps: 500,
        }
    }
}

impl OptimizerPolicy {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::Config(format!("optimizer: {what}")));
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if self.epochs == 0 {
            return bad("epochs must be positive");
        }
        if self.lr_decay_every == 0 {
            return bad("lr_decay_every must be positive");
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("lr must be positive");
        }
        if !(self.lr_decay_factor >= 1.0 && self.lr_decay_factor.is_finite()) {
            return bad("lr_decay_factor must be at least 1");
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad("weight_decay must be non-negative");
        }
        if !(0.0..1.0).contains(&self.momentum) || !(0.0..1.0).contains(&self.beta2) {
            return bad("momentum and beta2 must lie in [0,1)");
        }
        if !(self.eps > 0.0) {
            return bad("eps must be positive");
        }
        Ok(())
    }

    /// Learning rate for the 0-based `epoch` of `iteration` (1-based) at the
    /// 1-based optimizer `step` counted from the start of that iteration.
    pub fn lr_at(&self, iteration: usize, epoch: usize, step: u64) -> f64 {
        let decays = (epoch / self.lr_decay_every) as i32;
        let lr = self.lr / self.lr_decay_factor.powi(decays);
        if iteration == 1 && self.warmup_steps > 0 && step < self.warmup_steps {
            lr * step as f64 / self.warmup_steps as f64
        } else {
            lr
        }
    }

    pub fn step_params(&self, lr: f64) -> StepParams {
        StepParams { lr, weight_decay: self.weight_decay, beta1: self.momentum, beta2: self.beta2, eps: self.eps }
    }
}
