//! Cross-entropy and KL losses on logits, with analytic logit gradients.
//!
//! All losses are means over the batch. Weighted variants multiply each
//! example's term by its weight before averaging, which is how per-class
//! regularization strengths enter the objective.

use ndarray::{Array1, Array2, Axis, Zip};

use crate::error::{Error, Result};

/// Row-wise log-softmax, stabilized by subtracting each row's maximum.
pub fn log_softmax(logits: &Array2<f64>) -> Array2<f64> {
    let mut out = logits.clone();
    for mut row in out.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        row.mapv_inplace(|v| v - lse);
    }
    out
}

pub fn softmax(logits: &Array2<f64>) -> Array2<f64> {
    log_softmax(logits).mapv_into(f64::exp)
}

fn check_labels(logits: &Array2<f64>, labels: &[usize]) -> Result<()> {
    if logits.nrows() != labels.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} logit rows but {} labels",
            logits.nrows(),
            labels.len()
        )));
    }
    if let Some(&l) = labels.iter().find(|&&l| l >= logits.ncols()) {
        return Err(Error::ShapeMismatch(format!("label {l} >= {} classes", logits.ncols())));
    }
    Ok(())
}

fn check_weights(rows: usize, weights: &[f64]) -> Result<()> {
    if weights.len() != rows {
        return Err(Error::ShapeMismatch(format!("{rows} rows but {} weights", weights.len())));
    }
    Ok(())
}

/// Mean cross-entropy and its gradient `(softmax - onehot) / m`.
pub fn softmax_cross_entropy(logits: &Array2<f64>, labels: &[usize]) -> Result<(f64, Array2<f64>)> {
    let ones = vec![1.0; labels.len()];
    weighted_cross_entropy(logits, labels, &ones)
}

/// `(1/m) Σ_i weights[i]·CE_i` and its gradient with respect to the logits.
pub fn weighted_cross_entropy(
    logits: &Array2<f64>,
    labels: &[usize],
    weights: &[f64],
) -> Result<(f64, Array2<f64>)> {
    check_labels(logits, labels)?;
    check_weights(logits.nrows(), weights)?;
    let m = logits.nrows() as f64;
    let log_p = log_softmax(logits);
    let mut grad = log_p.mapv(f64::exp);
    let mut loss = 0.0;
    for (i, (mut row, (&y, &w))) in grad.rows_mut().into_iter().zip(labels.iter().zip(weights)).enumerate() {
        loss -= w * log_p[[i, y]];
        row[y] -= 1.0;
        row *= w / m;
    }
    Ok((loss / m, grad))
}

/// Loss and gradients of a batch-mean KL divergence.
#[derive(Debug, Clone)]
pub struct KlOutput {
    pub loss: f64,
    /// Per-example `KL(p_i ‖ q_i)`, unweighted.
    pub per_example: Array1<f64>,
    pub grad_p: Array2<f64>,
    pub grad_q: Array2<f64>,
}

/// Mean of `KL(softmax(logits_p) ‖ softmax(logits_q))` over the batch, with
/// gradients for both logit sets.
pub fn kl_divergence(logits_p: &Array2<f64>, logits_q: &Array2<f64>) -> Result<KlOutput> {
    let ones = vec![1.0; logits_p.nrows()];
    weighted_kl_divergence(logits_p, logits_q, &ones)
}

/// `(1/m) Σ_i weights[i]·KL(p_i ‖ q_i)`.
///
/// Gradients: `∂/∂q_logits = w_i (q - p) / m` and
/// `∂/∂p_logits = w_i p ⊙ (log p - log q - KL_i) / m`.
pub fn weighted_kl_divergence(
    logits_p: &Array2<f64>,
    logits_q: &Array2<f64>,
    weights: &[f64],
) -> Result<KlOutput> {
    if logits_p.dim() != logits_q.dim() {
        return Err(Error::ShapeMismatch(format!(
            "KL arguments differ in shape: {:?} vs {:?}",
            logits_p.dim(),
            logits_q.dim()
        )));
    }
    check_weights(logits_p.nrows(), weights)?;
    let m = logits_p.nrows() as f64;
    let log_p = log_softmax(logits_p);
    let log_q = log_softmax(logits_q);
    let p = log_p.mapv(f64::exp);
    let q = log_q.mapv(f64::exp);
    let diff = &log_p - &log_q;
    // Each term p·(log p - log q) is summed per row; clamp tiny negative
    // rounding so the loss stays non-negative.
    let per_example = (&p * &diff).sum_axis(Axis(1)).mapv(|v| v.max(0.0));
    let w = Array1::from(weights.to_vec());
    let loss = (&per_example * &w).sum() / m;

    let scale = w.mapv(|w| w / m).insert_axis(Axis(1));
    let grad_q = (&q - &p) * &scale;
    let mut grad_p = diff;
    Zip::from(grad_p.rows_mut())
        .and(&per_example)
        .for_each(|mut row, &kl| row.mapv_inplace(|d| d - kl));
    grad_p = grad_p * &p * &scale;

    Ok(KlOutput {
        loss,
        per_example,
        grad_p,
        grad_q,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_logits(rng: &mut ChaCha8Rng, m: usize, k: usize) -> Array2<f64> {
        Array2::from_shape_simple_fn((m, k), || rng.random_range(-3.0..3.0))
    }

    fn fd_check(f: impl Fn(&Array2<f64>) -> f64, x: &Array2<f64>, grad: &Array2<f64>) {
        let h = 1e-4;
        for idx in ndarray::indices(x.dim()) {
            let mut plus = x.clone();
            let mut minus = x.clone();
            plus[idx] += h;
            minus[idx] -= h;
            let fd = (f(&plus) - f(&minus)) / (2.0 * h);
            let g = grad[idx];
            let rel = (fd - g).abs() / fd.abs().max(g.abs()).max(1e-6);
            assert!(rel < 1e-4, "idx {idx:?}: fd {fd} vs analytic {g}");
        }
    }

    #[test]
    fn uniform_logits_give_log_k() {
        let (loss, _) = softmax_cross_entropy(&Array2::zeros((3, 10)), &[0, 4, 9]).unwrap();
        assert!((loss - 10f64.ln()).abs() < 1e-12);
        assert!((loss - 2.302585).abs() < 1e-6);
    }

    #[test]
    fn confident_correct_logit_gives_zero_loss() {
        let (loss, grad) = softmax_cross_entropy(&array![[800.0, 0.0, 0.0]], &[0]).unwrap();
        assert!(loss.abs() < 1e-300);
        assert!(grad.iter().all(|g| g.abs() < 1e-300));
    }

    #[test]
    fn cross_entropy_gradient_matches_fd() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let logits = random_logits(&mut rng, 4, 5);
        let labels = [0, 3, 4, 1];
        let weights = [0.5, 1.0, 2.0, 0.25];
        let (_, grad) = weighted_cross_entropy(&logits, &labels, &weights).unwrap();
        fd_check(|l| weighted_cross_entropy(l, &labels, &weights).unwrap().0, &logits, &grad);
    }

    #[test]
    fn kl_of_identical_distributions_is_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let logits = random_logits(&mut rng, 3, 4);
        let out = kl_divergence(&logits, &logits).unwrap();
        assert_eq!(out.loss, 0.0);
        assert!(out.grad_p.iter().chain(out.grad_q.iter()).all(|g| g.abs() < 1e-15));
    }

    #[test]
    fn kl_gradients_match_fd() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = random_logits(&mut rng, 3, 4);
        let q = random_logits(&mut rng, 3, 4);
        let w = [1.0, 0.3, 2.5];
        let out = weighted_kl_divergence(&p, &q, &w).unwrap();
        fd_check(|x| weighted_kl_divergence(x, &q, &w).unwrap().loss, &p, &out.grad_p);
        fd_check(|x| weighted_kl_divergence(&p, x, &w).unwrap().loss, &q, &out.grad_q);
    }

    #[test]
    fn shape_errors() {
        assert!(softmax_cross_entropy(&Array2::zeros((2, 3)), &[0]).is_err());
        assert!(softmax_cross_entropy(&Array2::zeros((1, 3)), &[3]).is_err());
        assert!(kl_divergence(&Array2::zeros((2, 3)), &Array2::zeros((2, 4))).is_err());
    }

    proptest::proptest! {
        #[test]
        fn losses_are_non_negative(
            vals in proptest::collection::vec(-50.0f64..50.0, 12),
            other in proptest::collection::vec(-50.0f64..50.0, 12),
            labels in proptest::collection::vec(0usize..4, 3),
        ) {
            let a = Array2::from_shape_vec((3, 4), vals).unwrap();
            let b = Array2::from_shape_vec((3, 4), other).unwrap();
            proptest::prop_assert!(softmax_cross_entropy(&a, &labels).unwrap().0 >= 0.0);
            proptest::prop_assert!(kl_divergence(&a, &b).unwrap().loss >= 0.0);
        }
    }
}
