use ndarray::Zip;
use serde::{Deserialize, Serialize};

use super::{DenseNet, Gradients};
use crate::error::{Error, Result};

/// Hyperparameters of momentum SGD with a step learning-rate schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SgdConfig {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    /// Epochs (0-based) from which the learning rate is divided by a further 10.
    pub milestones: Vec<usize>,
}

impl Default for SgdConfig {
    fn default() -> Self {
        SgdConfig {
            lr: 0.1,
            momentum: 0.9,
            weight_decay: 5e-4,
            milestones: vec![100, 150],
        }
    }
}

impl SgdConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::InvalidConfig(format!("lr must be positive, got {}", self.lr)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::InvalidConfig(format!("momentum must lie in [0, 1), got {}", self.momentum)));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::InvalidConfig(format!(
                "weight decay must be non-negative, got {}",
                self.weight_decay
            )));
        }
        Ok(())
    }
}

/// Momentum buffers plus the current learning rate.
#[derive(Debug, Clone, PartialEq)]
pub struct OptState {
    velocity: Gradients,
    config: SgdConfig,
    lr: f64,
}

impl OptState {
    pub fn new(net: &DenseNet, config: SgdConfig) -> Result<Self> {
        config.validate()?;
        Ok(OptState {
            velocity: Gradients::zeros_like(net),
            lr: config.lr,
            config,
        })
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    pub fn config(&self) -> &SgdConfig {
        &self.config
    }

    pub fn velocity(&self) -> &Gradients {
        &self.velocity
    }

    /// Sets the learning rate for `epoch`: the base rate divided by 10 for
    /// every milestone already reached.
    pub fn set_epoch(&mut self, epoch: usize) {
        let passed = self.config.milestones.iter().filter(|&&m| epoch >= m).count();
        self.lr = self.config.lr / 10f64.powi(passed as i32);
    }
}

/// `v ← μ·v + (g + wd·θ)`, then `θ ← θ - lr·v`.
pub fn sgd_step(net: &mut DenseNet, grads: &Gradients, opt: &mut OptState) -> Result<()> {
    if !grads.matches(net) || !opt.velocity.matches(net) {
        return Err(Error::ShapeMismatch("gradient or momentum shapes differ from network".into()));
    }
    let (mu, wd, lr) = (opt.config.momentum, opt.config.weight_decay, opt.lr);
    for (i, layer) in net.layers.iter_mut().enumerate() {
        Zip::from(&mut layer.weight)
            .and(&mut opt.velocity.weights[i])
            .and(&grads.weights[i])
            .for_each(|theta, v, &g| {
                *v = mu * *v + (g + wd * *theta);
                *theta -= lr * *v;
            });
        Zip::from(&mut layer.bias)
            .and(&mut opt.velocity.biases[i])
            .and(&grads.biases[i])
            .for_each(|theta, v, &g| {
                *v = mu * *v + (g + wd * *theta);
                *theta -= lr * *v;
            });
    }
    Ok(())
}
