//! Class-wise calibration of the perturbation margin and the robustness
//! regularization, and the training objectives they feed.
//!
//! Each class `k` keeps its robust train accuracy `t_k` from the previous
//! epoch. The margin becomes `ε_k = (λ1 + t_k)·ε` and the regularization
//! `β_k = (λ2 + t_k)·β`, so classes the model finds hard are attacked more
//! gently and regularized less.

use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{softmax_cross_entropy, weighted_cross_entropy, weighted_kl_divergence, DenseNet, Gradients};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BudgetConfig {
    pub lambda1: f64,
    pub lambda2: f64,
    pub eps_base: f64,
    pub beta_base: f64,
}

/// Desk-scale defaults: λ1 = λ2 = 0.5, ε = 0.1, β = 6.
impl Default for BudgetConfig {
    fn default() -> Self {
        BudgetConfig {
            lambda1: 0.5,
            lambda2: 0.5,
            eps_base: 0.1,
            beta_base: 6.0,
        }
    }
}

impl BudgetConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda1 >= 0.0 && self.lambda2 >= 0.0) {
            return Err(Error::InvalidConfig(format!(
                "lambda1/lambda2 must be non-negative, got {}/{}",
                self.lambda1, self.lambda2
            )));
        }
        // ε = 0 is allowed and gives standard (clean) training.
        if !(self.eps_base >= 0.0 && self.eps_base.is_finite()) {
            return Err(Error::InvalidConfig(format!("eps_base must be non-negative, got {}", self.eps_base)));
        }
        // β = 0 is allowed: it turns the TRADES objective into clean training.
        if !(self.beta_base >= 0.0) {
            return Err(Error::InvalidConfig(format!(
                "beta_base must be non-negative, got {}",
                self.beta_base
            )));
        }
        Ok(())
    }
}

fn check_rate(t: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::InvalidParameter(format!("t_k must lie in [0, 1], got {t}")));
    }
    Ok(())
}

/// Calibrated margin `(λ1 + t_k)·ε`.
pub fn ccm_update(t_k: f64, cfg: &BudgetConfig) -> Result<f64> {
    check_rate(t_k)?;
    Ok((cfg.lambda1 + t_k) * cfg.eps_base)
}

/// Calibrated regularization `(λ2 + t_k)·β`.
pub fn ccr_update(t_k: f64, cfg: &BudgetConfig) -> Result<f64> {
    check_rate(t_k)?;
    Ok((cfg.lambda2 + t_k) * cfg.beta_base)
}

/// Per-class tracked robust accuracy and the margins/regularization derived from it.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassState {
    t: Vec<Option<f64>>,
    eps: Vec<f64>,
    beta: Vec<f64>,
    correct: Vec<usize>,
    seen: Vec<usize>,
}

impl ClassState {
    /// Before any accuracy is tracked every class uses the base budget.
    pub fn new(num_classes: usize, budget: &BudgetConfig) -> Self {
        ClassState {
            t: vec![None; num_classes],
            eps: vec![budget.eps_base; num_classes],
            beta: vec![budget.beta_base; num_classes],
            correct: vec![0; num_classes],
            seen: vec![0; num_classes],
        }
    }

    pub fn num_classes(&self) -> usize {
        self.t.len()
    }

    pub fn tracked(&self) -> &[Option<f64>] {
        &self.t
    }

    pub fn eps(&self) -> &[f64] {
        &self.eps
    }

    pub fn beta(&self) -> &[f64] {
        &self.beta
    }

    /// Accumulates robust-correct counts from one training minibatch.
    pub fn record(&mut self, labels: &[usize], adversarial_predictions: &[usize]) -> Result<()> {
        if labels.len() != adversarial_predictions.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} labels but {} predictions",
                labels.len(),
                adversarial_predictions.len()
            )));
        }
        for (&y, &p) in labels.iter().zip(adversarial_predictions) {
            if y >= self.num_classes() {
                return Err(Error::ShapeMismatch(format!("label {y} out of range")));
            }
            self.seen[y] += 1;
            if y == p {
                self.correct[y] += 1;
            }
        }
        Ok(())
    }

    /// Closes the epoch: `t_k ← correct_k / seen_k` for every class seen,
    /// others keep their previous value. Counters reset.
    pub fn end_epoch(&mut self) {
        for k in 0..self.num_classes() {
            if self.seen[k] > 0 {
                self.t[k] = Some(self.correct[k] as f64 / self.seen[k] as f64);
            }
            self.correct[k] = 0;
            self.seen[k] = 0;
        }
    }

    /// Overrides a tracked accuracy, e.g. to probe schedule timing.
    pub fn set_tracked(&mut self, class: usize, t: f64) -> Result<()> {
        check_rate(t)?;
        let slot = self
            .t
            .get_mut(class)
            .ok_or_else(|| Error::InvalidParameter(format!("class {class} out of range")))?;
        *slot = Some(t);
        Ok(())
    }

    /// Recomputes `ε_k` (when `ccm`) and `β_k` (when `ccr`) from the tracked
    /// accuracies. Classes never tracked keep their current values.
    pub fn calibrate(&mut self, budget: &BudgetConfig, ccm: bool, ccr: bool) -> Result<()> {
        for k in 0..self.num_classes() {
            if let Some(t) = self.t[k] {
                if ccm {
                    self.eps[k] = ccm_update(t, budget)?;
                }
                if ccr {
                    self.beta[k] = ccr_update(t, budget)?;
                }
            }
        }
        Ok(())
    }

    pub fn eps_for(&self, labels: &[usize]) -> Vec<f64> {
        labels.iter().map(|&y| self.eps[y]).collect()
    }

    pub fn beta_for(&self, labels: &[usize]) -> Vec<f64> {
        labels.iter().map(|&y| self.beta[y]).collect()
    }
}

/// Cross-entropy on adversarial inputs and its parameter gradients.
pub fn at_loss(net: &DenseNet, x_adv: ArrayView2<f64>, labels: &[usize]) -> Result<(f64, Gradients)> {
    let (logits, cache) = net.forward(x_adv)?;
    let (loss, grad) = softmax_cross_entropy(&logits, labels)?;
    let (grads, _) = net.backward(&cache, &grad)?;
    Ok((loss, grads))
}

fn trades_weighted(
    net: &DenseNet,
    x_clean: ArrayView2<f64>,
    x_adv: ArrayView2<f64>,
    labels: &[usize],
    ce_weights: &[f64],
    kl_weights: &[f64],
) -> Result<(f64, Gradients)> {
    if x_clean.dim() != x_adv.dim() {
        return Err(Error::ShapeMismatch(format!(
            "clean {:?} vs adversarial {:?}",
            x_clean.dim(),
            x_adv.dim()
        )));
    }
    let (logits_c, cache_c) = net.forward(x_clean)?;
    let (logits_a, cache_a) = net.forward(x_adv)?;
    let (ce, ce_grad) = weighted_cross_entropy(&logits_c, labels, ce_weights)?;
    let kl = weighted_kl_divergence(&logits_c, &logits_a, kl_weights)?;
    let (mut grads, _) = net.backward(&cache_c, &(ce_grad + &kl.grad_p))?;
    let (adv_grads, _) = net.backward(&cache_a, &kl.grad_q)?;
    grads.add_assign(&adv_grads);
    Ok((ce + kl.loss, grads))
}

/// `mean_i [CE(f(x_i), y_i) + β·KL(f(x_i) ‖ f(x'_i))]`, gradients through both KL arguments.
pub fn trades_loss(
    net: &DenseNet,
    x_clean: ArrayView2<f64>,
    x_adv: ArrayView2<f64>,
    labels: &[usize],
    beta: f64,
) -> Result<(f64, Gradients)> {
    let m = labels.len();
    trades_weighted(net, x_clean, x_adv, labels, &vec![1.0; m], &vec![beta; m])
}

/// Normalized objective
/// `mean_i [CE(f(x_i), y_i) + β_i·KL(f(x_i) ‖ f(x'_i))] / (1 + β_i)`
/// with `β_i` the calibrated regularization of example `i`'s class.
pub fn trades_cfa_loss(
    net: &DenseNet,
    x_clean: ArrayView2<f64>,
    x_adv: ArrayView2<f64>,
    labels: &[usize],
    beta_per_example: &[f64],
) -> Result<(f64, Gradients)> {
    if beta_per_example.len() != labels.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} betas for {} examples",
            beta_per_example.len(),
            labels.len()
        )));
    }
    if let Some(b) = beta_per_example.iter().find(|b| !(**b >= 0.0)) {
        return Err(Error::InvalidParameter(format!("negative beta {b}")));
    }
    let ce_w: Vec<f64> = beta_per_example.iter().map(|b| 1.0 / (1.0 + b)).collect();
    let kl_w: Vec<f64> = beta_per_example.iter().map(|b| b / (1.0 + b)).collect();
    trades_weighted(net, x_clean, x_adv, labels, &ce_w, &kl_w)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{ArchSpec, DenseNet};
    use ndarray::Array2;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn budget(lambda1: f64, lambda2: f64, eps: f64, beta: f64) -> BudgetConfig {
        BudgetConfig {
            lambda1,
            lambda2,
            eps_base: eps,
            beta_base: beta,
        }
    }

    #[test]
    fn ccm_endpoints() {
        let b = budget(0.5, 0.5, 8.0 / 255.0, 6.0);
        assert_eq!(ccm_update(0.5, &b).unwrap(), 8.0 / 255.0);
        assert!((ccm_update(0.0, &b).unwrap() - 4.0 / 255.0).abs() < 1e-17);
        assert!((ccm_update(1.0, &b).unwrap() - 12.0 / 255.0).abs() < 1e-17);
        assert!(ccm_update(1.01, &b).is_err());
        assert!(ccm_update(-0.01, &b).is_err());
    }

    #[test]
    fn ccr_endpoints() {
        let b = budget(0.5, 0.5, 8.0 / 255.0, 6.0);
        assert_eq!(ccr_update(0.5, &b).unwrap(), 6.0);
        assert_eq!(ccr_update(0.0, &b).unwrap(), 3.0);
        assert!(ccr_update(2.0, &b).is_err());
        let b = budget(0.3, 0.4, 0.1, 6.0);
        assert!(ccr_update(0.2, &b).unwrap() < ccr_update(0.7, &b).unwrap());
    }

    #[test]
    fn state_bootstraps_then_tracks() {
        let b = budget(0.5, 0.5, 0.1, 6.0);
        let mut s = ClassState::new(3, &b);
        assert_eq!(s.eps(), &[0.1; 3]);
        assert_eq!(s.beta(), &[6.0; 3]);
        s.record(&[0, 0, 1, 1], &[0, 0, 1, 0]).unwrap();
        s.end_epoch();
        assert_eq!(s.tracked(), &[Some(1.0), Some(0.5), None]);
        s.calibrate(&b, true, true).unwrap();
        assert!((s.eps()[0] - 0.15).abs() < 1e-15);
        assert!((s.eps()[1] - 0.1).abs() < 1e-15);
        assert_eq!(s.eps()[2], 0.1);
        assert_eq!(s.beta()[0], 9.0);
        // Class 1 absent next epoch: t stays.
        s.record(&[0], &[1]).unwrap();
        s.end_epoch();
        assert_eq!(s.tracked(), &[Some(0.0), Some(0.5), None]);
        assert!(s.record(&[5], &[0]).is_err());
    }

    #[test]
    fn ccm_only_leaves_beta() {
        let b = budget(0.5, 0.5, 0.1, 6.0);
        let mut s = ClassState::new(2, &b);
        s.set_tracked(0, 0.2).unwrap();
        s.calibrate(&b, true, false).unwrap();
        assert_eq!(s.beta(), &[6.0, 6.0]);
        assert!((s.eps()[0] - 0.07).abs() < 1e-15);
        assert!(s.set_tracked(2, 0.1).is_err());
    }

    fn setup(seed: u64) -> (DenseNet, Array2<f64>, Array2<f64>, Vec<usize>) {
        let net = DenseNet::init(&ArchSpec::mlp(4, &[6], 3), seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = Array2::from_shape_simple_fn((5, 4), || rng.random_range(-1.0..1.0));
        let x_adv = x.mapv(|v| v + rng.random_range(-0.3..0.3));
        (net, x, x_adv, vec![0, 2, 1, 1, 0])
    }

    #[test]
    fn zero_beta_reduces_to_clean_ce() {
        let (net, x, x_adv, y) = setup(1);
        let (loss, grads) = trades_cfa_loss(&net, x.view(), x_adv.view(), &y, &[0.0; 5]).unwrap();
        let (ce, ce_grads) = at_loss(&net, x.view(), &y).unwrap();
        assert_eq!(loss, ce);
        assert_eq!(grads, ce_grads);
    }

    #[test]
    fn identical_inputs_scale_ce() {
        let (net, x, _, y) = setup(2);
        let betas = [1.0, 3.0, 6.0, 0.5, 2.0];
        let (loss, _) = trades_cfa_loss(&net, x.view(), x.view(), &y, &betas).unwrap();
        let logits = net.logits(x.view()).unwrap();
        let lp = crate::nn::log_softmax(&logits);
        let expect: f64 = y
            .iter()
            .enumerate()
            .map(|(i, &k)| -lp[[i, k]] / (1.0 + betas[i]))
            .sum::<f64>()
            / 5.0;
        assert!((loss - expect).abs() < 1e-14);
    }

    #[test]
    fn uniform_beta_matches_scaled_trades() {
        let (net, x, x_adv, y) = setup(3);
        let (cfa, _) = trades_cfa_loss(&net, x.view(), x_adv.view(), &y, &[6.0; 5]).unwrap();
        let (plain, _) = trades_loss(&net, x.view(), x_adv.view(), &y, 6.0).unwrap();
        assert!((cfa - plain / 7.0).abs() < 1e-14);
    }

    #[test]
    fn clean_point_adversary_reduces_at_to_standard_loss() {
        let (net, x, _, y) = setup(4);
        let (a, ga) = at_loss(&net, x.view(), &y).unwrap();
        let logits = net.logits(x.view()).unwrap();
        let (b, _) = softmax_cross_entropy(&logits, &y).unwrap();
        assert_eq!(a, b);
        assert_eq!(ga.weights.len(), 2);
    }

    #[test]
    fn natural_weight_favours_smaller_beta() {
        let w = |b: f64| 1.0 / (1.0 + b);
        assert!(w(3.0) > w(6.0));
    }
}
