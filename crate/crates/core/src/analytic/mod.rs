//! Closed-form binary toy model.
//!
//! Labels `y ∈ {+1, -1}` are uniform. The robust feature `x1 ∈ {±1}` equals
//! `y` with probability `p_y` and `-y` otherwise; the `d` non-robust features
//! are i.i.d. `N(η·y, σ²)`. The classifier family is
//! `f_w(x) = sign(x1 + (x2 + … + x_{d+1}) / w)` with `w > 0`.
//!
//! An L∞ adversary with budget `ε < 1` cannot flip `x1` and, because `f_w` is
//! linear with positive weights, its best move on the non-robust features is
//! to shift each of them by `-ε·y`. Class accuracy under budget `ε` is
//! therefore the clean accuracy with `η` replaced by `η - ε`; `ε = 0` gives the
//! clean accuracy and `ε = 2η` the robust accuracy.

mod normal;
mod theorems;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use normal::{normal_cdf, normal_pdf};
pub use theorems::{check_theorems, TheoremCheck, TheoremReport, Violation, STRICT_MARGIN};

/// One of the two toy classes. `Plus` is the easy class (more reliable robust
/// feature), `Minus` the hard one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ToyClass {
    Plus,
    Minus,
}

impl ToyClass {
    pub const BOTH: [ToyClass; 2] = [ToyClass::Plus, ToyClass::Minus];

    pub fn sign(self) -> f64 {
        match self {
            ToyClass::Plus => 1.0,
            ToyClass::Minus => -1.0,
        }
    }

    /// Class index used when the toy data is fed to the network: `+1 → 0`, `-1 → 1`.
    pub fn index(self) -> usize {
        match self {
            ToyClass::Plus => 0,
            ToyClass::Minus => 1,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            ToyClass::Plus => "+1",
            ToyClass::Minus => "-1",
        }
    }
}

/// Parameters of the toy data distribution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ToyModelParams {
    pub p_plus: f64,
    pub p_minus: f64,
    pub eta: f64,
    pub d: usize,
    pub sigma2: f64,
}

impl ToyModelParams {
    pub fn new(p_plus: f64, p_minus: f64, eta: f64, d: usize, sigma2: f64) -> Result<Self> {
        let params = ToyModelParams {
            p_plus,
            p_minus,
            eta,
            d,
            sigma2,
        };
        params.validate()?;
        Ok(params)
    }

    /// `p₊ = 0.85, p₋ = 0.70, η = 0.4, d = 1, σ² = 1`, the setting used for the analysis.
    pub fn reference() -> Self {
        ToyModelParams {
            p_plus: 0.85,
            p_minus: 0.70,
            eta: 0.4,
            d: 1,
            sigma2: 1.0,
        }
    }

    /// Same as [`ToyModelParams::reference`] with `σ² = 0.6`, the visualization setting.
    pub fn visualization() -> Self {
        ToyModelParams {
            sigma2: 0.6,
            ..Self::reference()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ToyModelParams {
            p_plus,
            p_minus,
            eta,
            d,
            sigma2,
        } = *self;
        if !(0.5 < p_minus && p_minus < p_plus && p_plus < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "need 0.5 < p_minus < p_plus < 1, got p_plus={p_plus}, p_minus={p_minus}"
            )));
        }
        if !(eta > 0.0 && eta < 0.5) {
            return Err(Error::InvalidParameter(format!(
                "eta must lie in (0, 0.5), got {eta}"
            )));
        }
        if d == 0 {
            return Err(Error::InvalidParameter("d must be at least 1".into()));
        }
        if !(sigma2 > 0.0 && sigma2.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "sigma2 must be positive, got {sigma2}"
            )));
        }
        Ok(())
    }

    pub fn reliability(&self, y: ToyClass) -> f64 {
        match y {
            ToyClass::Plus => self.p_plus,
            ToyClass::Minus => self.p_minus,
        }
    }

    /// Budget at which robust accuracy is evaluated, `2η`.
    pub fn robust_eps(&self) -> f64 {
        2.0 * self.eta
    }
}

/// The simplified linear classifier `f_w`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearToyClassifier {
    w: f64,
}

impl LinearToyClassifier {
    pub fn new(w: f64) -> Result<Self> {
        if !(w > 0.0 && w.is_finite()) {
            return Err(Error::InvalidParameter(format!("w must be positive, got {w}")));
        }
        Ok(LinearToyClassifier { w })
    }

    pub fn w(&self) -> f64 {
        self.w
    }

    /// Score `x1 + Σ x_i / w`; the predicted class is its sign.
    pub fn score(&self, robust: f64, non_robust_sum: f64) -> f64 {
        robust + non_robust_sum / self.w
    }

    pub fn predict(&self, robust: f64, non_robust_sum: f64) -> ToyClass {
        if self.score(robust, non_robust_sum) > 0.0 {
            ToyClass::Plus
        } else {
            ToyClass::Minus
        }
    }
}

fn check_eval_eps(params: &ToyModelParams, eval_eps: f64) -> Result<()> {
    if !(0.0..=params.robust_eps()).contains(&eval_eps) {
        return Err(Error::InvalidParameter(format!(
            "eval_eps must lie in [0, 2*eta] = [0, {}], got {eval_eps}",
            params.robust_eps()
        )));
    }
    Ok(())
}

/// Accuracy of `f_w` on class `y` against the worst-case adversary of budget
/// `eval_eps`:
/// `p_y·Φ((d(η-ε)+w)/(σ√d)) + (1-p_y)·Φ((d(η-ε)-w)/(σ√d))`.
pub fn class_accuracy(params: &ToyModelParams, y: ToyClass, w: f64, eval_eps: f64) -> Result<f64> {
    params.validate()?;
    LinearToyClassifier::new(w)?;
    check_eval_eps(params, eval_eps)?;
    Ok(class_accuracy_unchecked(params, y, w, eval_eps))
}

pub(crate) fn class_accuracy_unchecked(params: &ToyModelParams, y: ToyClass, w: f64, eps: f64) -> f64 {
    let d = params.d as f64;
    let scale = (params.sigma2 * d).sqrt();
    let shift = d * (params.eta - eps);
    let p = params.reliability(y);
    p * normal_cdf((shift + w) / scale) + (1.0 - p) * normal_cdf((shift - w) / scale)
}

/// `w*_y = σ²·ln(p_y / (1 - p_y)) / (2η)`, the maximizer of the clean accuracy
/// of class `y` (`σ² = 1` in the analysis).
pub fn optimal_w_clean(params: &ToyModelParams, y: ToyClass) -> Result<f64> {
    params.validate()?;
    let p = params.reliability(y);
    Ok(params.sigma2 * (p / (1.0 - p)).ln() / (2.0 * params.eta))
}

/// `ŵ_ε = σ²·ln(p / (2 - p)) / (2(η - ε))` with `p = p₊ + p₋`, the maximizer of the
/// overall accuracy on data attacked with budget `train_eps`.
pub fn optimal_w_train(params: &ToyModelParams, train_eps: f64) -> Result<f64> {
    params.validate()?;
    if !(train_eps >= 0.0 && train_eps < params.eta) {
        return Err(Error::InvalidParameter(format!(
            "train_eps must lie in [0, eta) = [0, {}), got {train_eps}",
            params.eta
        )));
    }
    let p = params.p_plus + params.p_minus;
    Ok(params.sigma2 * (p / (2.0 - p)).ln() / (2.0 * (params.eta - train_eps)))
}

/// Labeled toy sample. Row `i` of `features` is `(x1, x2, …, x_{d+1})`.
#[derive(Debug, Clone, PartialEq)]
pub struct ToySample {
    pub features: Array2<f64>,
    pub labels: Vec<ToyClass>,
}

struct ToySampler {
    rng: ChaCha8Rng,
    params: ToyModelParams,
    noise: Normal<f64>,
}

impl ToySampler {
    fn new(params: &ToyModelParams, seed: u64) -> Self {
        ToySampler {
            rng: ChaCha8Rng::seed_from_u64(seed),
            params: *params,
            noise: Normal::new(0.0, params.sigma2.sqrt()).expect("sigma2 validated"),
        }
    }

    /// Draws one example, writing the non-robust features into `out`.
    fn draw(&mut self, out: &mut [f64]) -> (ToyClass, f64) {
        let y = if self.rng.random_bool(0.5) {
            ToyClass::Plus
        } else {
            ToyClass::Minus
        };
        let s = y.sign();
        let robust = if self.rng.random_bool(self.params.reliability(y)) {
            s
        } else {
            -s
        };
        for v in out.iter_mut() {
            *v = self.params.eta * s + self.noise.sample(&mut self.rng);
        }
        (y, robust)
    }
}

/// Draws `n` i.i.d. examples, deterministically per `seed`.
pub fn sample_dataset(params: &ToyModelParams, n: usize, seed: u64) -> Result<ToySample> {
    params.validate()?;
    if n == 0 {
        return Err(Error::InvalidParameter("n must be at least 1".into()));
    }
    let d = params.d;
    let mut sampler = ToySampler::new(params, seed);
    let mut features = Array2::zeros((n, d + 1));
    let mut labels = Vec::with_capacity(n);
    let mut buf = vec![0.0; d];
    for mut row in features.rows_mut() {
        let (y, robust) = sampler.draw(&mut buf);
        row[0] = robust;
        for (dst, &v) in row.iter_mut().skip(1).zip(&buf) {
            *dst = v;
        }
        labels.push(y);
    }
    Ok(ToySample { features, labels })
}

/// Empirical accuracy of one class with its binomial standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ClassEstimate {
    pub accuracy: f64,
    pub std_error: f64,
    pub count: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct McAccuracy {
    pub plus: ClassEstimate,
    pub minus: ClassEstimate,
}

impl McAccuracy {
    pub fn class(&self, y: ToyClass) -> ClassEstimate {
        match y {
            ToyClass::Plus => self.plus,
            ToyClass::Minus => self.minus,
        }
    }
}

/// Monte-Carlo estimate of [`class_accuracy`]: samples `n` examples, shifts
/// every non-robust feature by `-eval_eps·y` and classifies with `f_w`.
pub fn monte_carlo_accuracy(
    params: &ToyModelParams,
    w: f64,
    eval_eps: f64,
    n: usize,
    seed: u64,
) -> Result<McAccuracy> {
    params.validate()?;
    let clf = LinearToyClassifier::new(w)?;
    check_eval_eps(params, eval_eps)?;
    if n == 0 {
        return Err(Error::InvalidParameter("n must be at least 1".into()));
    }
    let mut sampler = ToySampler::new(params, seed);
    let mut buf = vec![0.0; params.d];
    let mut correct = [0usize; 2];
    let mut seen = [0usize; 2];
    for _ in 0..n {
        let (y, robust) = sampler.draw(&mut buf);
        let shift = eval_eps * y.sign();
        let sum: f64 = buf.iter().map(|v| v - shift).sum();
        seen[y.index()] += 1;
        if clf.predict(robust, sum) == y {
            correct[y.index()] += 1;
        }
    }
    let estimate = |k: usize| {
        let count = seen[k];
        let accuracy = if count == 0 {
            f64::NAN
        } else {
            correct[k] as f64 / count as f64
        };
        let std_error = (accuracy * (1.0 - accuracy) / count as f64).sqrt();
        ClassEstimate {
            accuracy,
            std_error,
            count,
        }
    };
    Ok(McAccuracy {
        plus: estimate(0),
        minus: estimate(1),
    })
}
