//! L∞ projected gradient attacks.
//!
//! Each example carries its own budget, so class-calibrated margins are passed
//! as a per-row `eps` slice. Every returned point lies in
//! `[x - eps_i, x + eps_i]` coordinate-wise and, when the dataset declares
//! them, inside the domain bounds.

use ndarray::{Array2, ArrayView2, Zip};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{kl_divergence, softmax_cross_entropy, DenseNet};

/// PGD step size `α`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepSize {
    Absolute(f64),
    /// `α = fraction · eps_i` for each example.
    EpsFraction(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackConfig {
    /// Base budget; per-class margins override it example by example.
    pub eps: f64,
    pub step: StepSize,
    pub steps: usize,
    pub random_start: bool,
    #[serde(default)]
    pub domain_bounds: Option<(f64, f64)>,
    pub seed: u64,
}

impl AttackConfig {
    /// PGD-10 with `α = eps/4` and a uniform random start.
    pub fn pgd10(eps: f64) -> Self {
        AttackConfig {
            eps,
            step: StepSize::EpsFraction(0.25),
            steps: 10,
            random_start: true,
            domain_bounds: None,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eps >= 0.0 && self.eps.is_finite()) {
            return Err(Error::InvalidConfig(format!("eps must be >= 0, got {}", self.eps)));
        }
        let alpha = match self.step {
            StepSize::Absolute(a) | StepSize::EpsFraction(a) => a,
        };
        if self.steps > 0 && !(alpha > 0.0) {
            return Err(Error::InvalidConfig(format!("step size must be > 0, got {alpha}")));
        }
        if let Some((lo, hi)) = self.domain_bounds {
            if !(lo < hi) {
                return Err(Error::InvalidConfig(format!("domain bounds need lo < hi, got [{lo}, {hi}]")));
            }
        }
        Ok(())
    }

    pub fn alpha(&self, eps: f64) -> f64 {
        match self.step {
            StepSize::Absolute(a) => a,
            StepSize::EpsFraction(f) => f * eps,
        }
    }
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Clips `x_adv` row `i` into `[x_orig - eps[i], x_orig + eps[i]]`, then into
/// `bounds` when given. Idempotent.
pub fn project(
    x_adv: &mut Array2<f64>,
    x_orig: ArrayView2<f64>,
    eps: &[f64],
    bounds: Option<(f64, f64)>,
) -> Result<()> {
    if x_adv.dim() != x_orig.dim() || eps.len() != x_adv.nrows() {
        return Err(Error::ShapeMismatch(format!(
            "project: x_adv {:?}, x_orig {:?}, {} budgets",
            x_adv.dim(),
            x_orig.dim(),
            eps.len()
        )));
    }
    for ((mut adv, orig), &e) in x_adv.rows_mut().into_iter().zip(x_orig.rows()).zip(eps) {
        Zip::from(&mut adv).and(&orig).for_each(|a, &o| {
            let mut v = a.max(o - e).min(o + e);
            if let Some((lo, hi)) = bounds {
                v = v.max(lo).min(hi);
            }
            *a = v;
        });
    }
    Ok(())
}

fn check_eps(inputs: &ArrayView2<f64>, eps: &[f64]) -> Result<()> {
    if eps.len() != inputs.nrows() {
        return Err(Error::ShapeMismatch(format!(
            "{} budgets for {} examples",
            eps.len(),
            inputs.nrows()
        )));
    }
    if let Some(e) = eps.iter().find(|e| !(**e >= 0.0 && e.is_finite())) {
        return Err(Error::InvalidParameter(format!("negative or non-finite budget {e}")));
    }
    Ok(())
}

fn start_point<R: Rng + ?Sized>(
    inputs: ArrayView2<f64>,
    eps: &[f64],
    cfg: &AttackConfig,
    rng: &mut R,
) -> Result<Array2<f64>> {
    let mut x = inputs.to_owned();
    if cfg.random_start {
        for (mut row, &e) in x.rows_mut().into_iter().zip(eps) {
            if e > 0.0 {
                row.mapv_inplace(|v| v + rng.random_range(-e..=e));
            }
        }
    }
    project(&mut x, inputs, eps, cfg.domain_bounds)?;
    Ok(x)
}

fn ascend(
    x: &mut Array2<f64>,
    inputs: ArrayView2<f64>,
    grad: &Array2<f64>,
    eps: &[f64],
    cfg: &AttackConfig,
) -> Result<()> {
    for ((mut row, g), &e) in x.rows_mut().into_iter().zip(grad.rows()).zip(eps) {
        let alpha = cfg.alpha(e);
        Zip::from(&mut row).and(&g).for_each(|v, &g| *v += alpha * sign(g));
    }
    project(x, inputs, eps, cfg.domain_bounds)
}

/// PGD on the cross-entropy loss:
/// `x ← Π(x + α·sign(∇_x CE(f(x), y)))`, repeated `cfg.steps` times.
pub fn pgd_ce<R: Rng + ?Sized>(
    net: &DenseNet,
    inputs: ArrayView2<f64>,
    labels: &[usize],
    eps: &[f64],
    cfg: &AttackConfig,
    rng: &mut R,
) -> Result<Array2<f64>> {
    cfg.validate()?;
    check_eps(&inputs, eps)?;
    let mut x = start_point(inputs, eps, cfg, rng)?;
    for _ in 0..cfg.steps {
        let (logits, cache) = net.forward(x.view())?;
        let (_, grad_logits) = softmax_cross_entropy(&logits, labels)?;
        let grad = net.input_gradient(&cache, &grad_logits)?;
        ascend(&mut x, inputs, &grad, eps, cfg)?;
    }
    Ok(x)
}

/// PGD on `KL(softmax f(x) ‖ softmax f(x'))`, differentiating through `x'`
/// only; the clean logits are computed once and held fixed.
pub fn pgd_kl<R: Rng + ?Sized>(
    net: &DenseNet,
    inputs: ArrayView2<f64>,
    eps: &[f64],
    cfg: &AttackConfig,
    rng: &mut R,
) -> Result<Array2<f64>> {
    cfg.validate()?;
    check_eps(&inputs, eps)?;
    let reference = net.logits(inputs)?;
    let mut x = start_point(inputs, eps, cfg, rng)?;
    for _ in 0..cfg.steps {
        let (logits, cache) = net.forward(x.view())?;
        let kl = kl_divergence(&reference, &logits)?;
        let grad = net.input_gradient(&cache, &kl.grad_q)?;
        ascend(&mut x, inputs, &grad, eps, cfg)?;
    }
    Ok(x)
}
