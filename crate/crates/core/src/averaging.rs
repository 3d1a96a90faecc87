//! Exponential moving average of weights, optionally gated on worst-class
//! validation robustness.

use ndarray::Zip;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::DenseNet;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AveragingMode {
    None,
    Ema,
    Fawa,
}

/// Outcome of one averaging step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum StepOutcome {
    Accepted,
    Skipped,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AveragedModel {
    avg: DenseNet,
    decay: f64,
    start_epoch: usize,
    threshold: f64,
    initialized: bool,
    accepted: usize,
    skipped: usize,
}

/// `θ̄ ← α·θ̄ + (1-α)·θ`, elementwise.
pub fn ema_update(avg: &mut DenseNet, live: &DenseNet, decay: f64) -> Result<()> {
    if !avg.same_shape(live) {
        return Err(Error::ShapeMismatch("averaged and live model differ in shape".into()));
    }
    let keep = 1.0 - decay;
    for (a, l) in avg.layers_mut().iter_mut().zip(live.layers()) {
        Zip::from(&mut a.weight).and(&l.weight).for_each(|a, &l| *a = decay * *a + keep * l);
        Zip::from(&mut a.bias).and(&l.bias).for_each(|a, &l| *a = decay * *a + keep * l);
    }
    Ok(())
}

impl AveragedModel {
    /// Starts as a copy of `live`. The first accepted step at or after
    /// `start_epoch` re-copies the live model; later accepted steps apply EMA.
    pub fn new(live: &DenseNet, decay: f64, start_epoch: usize, threshold: f64) -> Result<Self> {
        if !(decay > 0.0 && decay < 1.0) {
            return Err(Error::InvalidConfig(format!("decay must lie in (0, 1), got {decay}")));
        }
        if !(0.0..=1.0).contains(&threshold) {
            return Err(Error::InvalidConfig(format!("threshold must lie in [0, 1], got {threshold}")));
        }
        Ok(AveragedModel {
            avg: live.clone(),
            decay,
            start_epoch,
            threshold,
            initialized: false,
            accepted: 0,
            skipped: 0,
        })
    }

    pub fn model(&self) -> &DenseNet {
        &self.avg
    }

    pub fn decay(&self) -> f64 {
        self.decay
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    pub fn start_epoch(&self) -> usize {
        self.start_epoch
    }

    pub fn is_initialized(&self) -> bool {
        self.initialized
    }

    pub fn accepted_count(&self) -> usize {
        self.accepted
    }

    pub fn skipped_count(&self) -> usize {
        self.skipped
    }

    fn accept(&mut self, live: &DenseNet) -> Result<()> {
        if self.initialized {
            ema_update(&mut self.avg, live, self.decay)?;
        } else {
            if !self.avg.same_shape(live) {
                return Err(Error::ShapeMismatch("averaged and live model differ in shape".into()));
            }
            self.avg = live.clone();
            self.initialized = true;
        }
        self.accepted += 1;
        Ok(())
    }

    /// Ungated averaging step.
    pub fn ema_step(&mut self, live: &DenseNet, epoch: usize) -> Result<StepOutcome> {
        self.gated(live, None, epoch)
    }

    /// Gated step: averages only when `epoch >= start_epoch` and
    /// `worst_val_robust >= threshold`; otherwise the average is untouched.
    pub fn fawa_step(&mut self, live: &DenseNet, worst_val_robust: f64, epoch: usize) -> Result<StepOutcome> {
        if !(0.0..=1.0).contains(&worst_val_robust) {
            return Err(Error::InvalidParameter(format!(
                "worst-class robustness must lie in [0, 1], got {worst_val_robust}"
            )));
        }
        self.gated(live, Some(worst_val_robust), epoch)
    }

    fn gated(&mut self, live: &DenseNet, worst: Option<f64>, epoch: usize) -> Result<StepOutcome> {
        let pass = worst.is_none_or(|w| w >= self.threshold);
        if epoch >= self.start_epoch && pass {
            self.accept(live)?;
            Ok(StepOutcome::Accepted)
        } else {
            self.skipped += 1;
            Ok(StepOutcome::Skipped)
        }
    }
}
