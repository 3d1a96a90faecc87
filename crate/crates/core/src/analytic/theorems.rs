//! Automated checks of the four ordering properties of the toy model.

use serde::Serialize;

use super::{class_accuracy_unchecked, optimal_w_clean, optimal_w_train, ToyClass, ToyModelParams};
use crate::error::{Error, Result};

/// Minimum gap required for a strict inequality to count as satisfied.
pub const STRICT_MARGIN: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Violation {
    pub location: String,
    /// How far the gap fell short of [`STRICT_MARGIN`].
    pub magnitude: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TheoremCheck {
    pub name: String,
    pub statement: String,
    pub passed: bool,
    pub points_checked: usize,
    /// Largest shortfall over all checked inequalities, 0 when all hold.
    pub worst_violation: f64,
    /// Smallest observed gap `lhs - rhs` over all checked inequalities.
    pub min_gap: f64,
    pub violations: Vec<Violation>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TheoremReport {
    pub params: ToyModelParams,
    pub w_grid: Vec<f64>,
    pub eps_grid: Vec<f64>,
    pub delta_w: f64,
    pub margin: f64,
    pub theorems: Vec<TheoremCheck>,
    pub passed: bool,
}

struct Checker {
    check: TheoremCheck,
}

impl Checker {
    fn new(name: &str, statement: &str) -> Self {
        Checker {
            check: TheoremCheck {
                name: name.to_string(),
                statement: statement.to_string(),
                passed: true,
                points_checked: 0,
                worst_violation: 0.0,
                min_gap: f64::INFINITY,
                violations: Vec::new(),
            },
        }
    }

    /// Records the strict inequality `lhs > rhs`.
    fn greater(&mut self, lhs: f64, rhs: f64, location: impl FnOnce() -> String) {
        let gap = lhs - rhs;
        self.check.min_gap = self.check.min_gap.min(gap);
        // NaN gaps fail too.
        if !(gap >= STRICT_MARGIN) {
            let magnitude = if gap.is_nan() { f64::INFINITY } else { STRICT_MARGIN - gap };
            self.check.worst_violation = self.check.worst_violation.max(magnitude);
            self.check.violations.push(Violation {
                location: location(),
                magnitude,
            });
        }
    }

    fn point(&mut self) {
        self.check.points_checked += 1;
    }

    fn finish(mut self) -> TheoremCheck {
        self.check.passed = self.check.violations.is_empty();
        self.check
    }
}

/// Evaluates the four properties on the given grids and reports every violation.
///
/// 1. `A₊(w) > A₋(w)` and `R₊(w) > R₋(w)` for every `w` in `w_grid`.
/// 2. `ŵ_ε` strictly increasing over the sorted `eps_grid`.
/// 3. `w*₊ > w*₋`.
/// 4. With `Δ` the change over `[w, w + delta_w]`: `ΔA₋ < ΔA₊ < 0` for every
///    grid `w > w*₊`, and `0 < ΔR₋ < ΔR₊` for every grid `w`.
pub fn check_theorems(
    params: &ToyModelParams,
    w_grid: &[f64],
    delta_w: f64,
    eps_grid: &[f64],
) -> Result<TheoremReport> {
    params.validate()?;
    if w_grid.is_empty() || eps_grid.is_empty() {
        return Err(Error::InvalidParameter("grids must be non-empty".into()));
    }
    if let Some(w) = w_grid.iter().find(|w| !(**w > 0.0 && w.is_finite())) {
        return Err(Error::InvalidParameter(format!("grid contains non-positive w={w}")));
    }
    if !(delta_w > 0.0) {
        return Err(Error::InvalidParameter(format!("delta_w must be positive, got {delta_w}")));
    }
    if let Some(e) = eps_grid.iter().find(|e| !(**e >= 0.0 && **e < params.eta)) {
        return Err(Error::InvalidParameter(format!("eps grid entry {e} outside [0, eta)")));
    }

    let clean = |y, w| class_accuracy_unchecked(params, y, w, 0.0);
    let robust = |y, w| class_accuracy_unchecked(params, y, w, params.robust_eps());
    let (plus, minus) = (ToyClass::Plus, ToyClass::Minus);

    let mut t1 = Checker::new(
        "theorem1_hard_class",
        "A_{+1}(f_w) > A_{-1}(f_w) and R_{+1}(f_w) > R_{-1}(f_w) for all w > 0",
    );
    for &w in w_grid {
        t1.point();
        t1.greater(clean(plus, w), clean(minus, w), || format!("clean, w={w}"));
        t1.greater(robust(plus, w), robust(minus, w), || format!("robust, w={w}"));
    }

    let mut t2 = Checker::new(
        "theorem2_margin_enlarges_w",
        "the train-optimal w is strictly increasing in the training budget eps",
    );
    let mut eps_sorted = eps_grid.to_vec();
    eps_sorted.sort_by(f64::total_cmp);
    eps_sorted.dedup();
    let w_hat = eps_sorted
        .iter()
        .map(|&e| optimal_w_train(params, e))
        .collect::<Result<Vec<_>>>()?;
    for (i, pair) in w_hat.windows(2).enumerate() {
        t2.point();
        let (lo, hi) = (eps_sorted[i], eps_sorted[i + 1]);
        t2.greater(pair[1], pair[0], || format!("eps={lo} -> eps={hi}"));
    }
    if w_hat.len() == 1 {
        t2.point();
    }

    let mut t3 = Checker::new(
        "theorem3_best_clean_w",
        "w*_{+1} > w*_{-1} where w*_y maximizes A_y(f_w)",
    );
    let w_star_plus = optimal_w_clean(params, plus)?;
    let w_star_minus = optimal_w_clean(params, minus)?;
    t3.point();
    t3.greater(w_star_plus, w_star_minus, || {
        format!("w*+={w_star_plus}, w*-={w_star_minus}")
    });

    let mut t4 = Checker::new(
        "theorem4_strong_attack_hurts_hard_class",
        "for w > w*_{+1}: dA_{-1} < dA_{+1} < 0; for all w > 0: 0 < dR_{-1} < dR_{+1}",
    );
    for &w in w_grid {
        let w2 = w + delta_w;
        t4.point();
        if w > w_star_plus {
            let da_plus = clean(plus, w2) - clean(plus, w);
            let da_minus = clean(minus, w2) - clean(minus, w);
            t4.greater(da_plus, da_minus, || format!("clean dA- < dA+, w={w}"));
            t4.greater(0.0, da_plus, || format!("clean dA+ < 0, w={w}"));
        }
        let dr_plus = robust(plus, w2) - robust(plus, w);
        let dr_minus = robust(minus, w2) - robust(minus, w);
        t4.greater(dr_minus, 0.0, || format!("robust dR- > 0, w={w}"));
        t4.greater(dr_plus, dr_minus, || format!("robust dR- < dR+, w={w}"));
    }

    let theorems = vec![t1.finish(), t2.finish(), t3.finish(), t4.finish()];
    let passed = theorems.iter().all(|t| t.passed);
    Ok(TheoremReport {
        params: *params,
        w_grid: w_grid.to_vec(),
        eps_grid: eps_sorted,
        delta_w,
        margin: STRICT_MARGIN,
        theorems,
        passed,
    })
}
