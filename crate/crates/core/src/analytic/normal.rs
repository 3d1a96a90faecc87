//! Standard normal distribution function and density.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

/// Standard normal CDF, `Φ(x) = P(N(0,1) < x)`.
///
/// Evaluated as `erfc(-x/√2)/2`, which keeps full relative precision in the
/// lower tail where `1 + erf` would cancel.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x * FRAC_1_SQRT_2)
}

/// Standard normal density `φ(x) = exp(-x²/2)/√(2π)`.
pub fn normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * PI).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Φ(x) = 1/2 + φ(x)·Σ x^(2n+1)/(2n+1)!!, summed until the terms vanish.
    fn series_cdf(x: f64) -> f64 {
        let mut term = x;
        let mut sum = x;
        let mut n = 0.0;
        while term.abs() > 1e-18 * sum.abs().max(1e-300) {
            n += 1.0;
            term *= x * x / (2.0 * n + 1.0);
            sum += term;
        }
        0.5 + (-0.5 * x * x).exp() / (2.0 * PI).sqrt() * sum
    }

    #[test]
    fn cdf_at_zero_is_half() {
        assert_eq!(normal_cdf(0.0), 0.5);
    }

    #[test]
    fn cdf_reference_value() {
        assert!((normal_cdf(0.4) - 0.65542).abs() < 5e-6);
        assert!((normal_cdf(0.4) - series_cdf(0.4)).abs() < 1e-12);
    }

    #[test]
    fn cdf_matches_series_oracle() {
        let mut x = -6.0;
        while x <= 6.0 {
            let err = (normal_cdf(x) - series_cdf(x)).abs();
            assert!(err <= 1e-12, "x={x} err={err}");
            x += 0.05;
        }
    }

    #[test]
    fn cdf_symmetry() {
        let mut x = 0.0;
        while x <= 8.0 {
            assert!((normal_cdf(x) + normal_cdf(-x) - 1.0).abs() <= 1e-12);
            x += 0.01;
        }
    }

    #[test]
    fn pdf_values() {
        assert!((normal_pdf(0.0) - 0.39894).abs() < 5e-6);
        for &x in &[0.3, 1.7, 4.2] {
            assert_eq!(normal_pdf(x), normal_pdf(-x));
        }
    }

    #[test]
    fn pdf_is_derivative_of_cdf() {
        let h = 1e-5;
        for &x in &[-3.0, -1.2, -0.1, 0.0, 0.4, 2.5] {
            let fd = (normal_cdf(x + h) - normal_cdf(x - h)) / (2.0 * h);
            assert!((fd - normal_pdf(x)).abs() < 1e-6, "x={x}");
        }
    }
}
