//! Deviation bounds for Poisson counts, plus exact pmf/cdf helpers used as
//! oracles by the test suites.

use crate::error::{GravError, Result};
use statrs::function::gamma::ln_gamma;

/// Range constant for the concentration bound: it is asserted for
/// `0 <= t <= DELTA * lambda`. Violations outside that window are reported
/// by the harness, never asserted.
pub const CONCENTRATION_DELTA: f64 = 1.0;

/// Explicit constant for the point-mass lower bound. Stirling gives
/// `n! <= e * sqrt(n) * (n/e)^n`, so `1/e` is valid for every `n >= 1`.
pub const POINT_MASS_C: f64 = 1.0 / std::f64::consts::E;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoundPart {
    /// `P(X >= t) <= exp(-t/4 * ln(t/lambda))` for `t >= 2 lambda`.
    UpperTail,
    /// `P(|X - lambda| >= t) <= 2 exp(-t^2 / (3 lambda))` for `0 <= t <= delta*lambda`.
    Concentration,
    /// `P(X = n) >= c/sqrt(n) * exp(-(n-lambda)^2/lambda)` for integer `n >= lambda`.
    PointMass,
}

/// Evaluate one of the three deviation bounds at `(lambda, t)`.
pub fn poisson_bound(lambda: f64, t: f64, part: BoundPart) -> Result<f64> {
    if !(lambda > 0.0) {
        return Err(GravError::InvalidParameter("lambda must be positive".into()));
    }
    match part {
        BoundPart::UpperTail => {
            if t < 2.0 * lambda {
                return Err(GravError::Precondition(format!(
                    "upper tail bound needs t >= 2*lambda; got t={t}, lambda={lambda}"
                )));
            }
            Ok((-t / 4.0 * (t / lambda).ln()).exp())
        }
        BoundPart::Concentration => {
            if !(0.0..=CONCENTRATION_DELTA * lambda).contains(&t) {
                return Err(GravError::Precondition(format!(
                    "concentration bound needs 0 <= t <= {CONCENTRATION_DELTA}*lambda"
                )));
            }
            Ok(2.0 * (-t * t / (3.0 * lambda)).exp())
        }
        BoundPart::PointMass => {
            let n = t;
            if n < lambda || n < 1.0 || n.fract() != 0.0 {
                return Err(GravError::Precondition(
                    "point-mass bound needs integer n >= max(lambda, 1)".into(),
                ));
            }
            Ok(POINT_MASS_C / n.sqrt() * (-(n - lambda) * (n - lambda) / lambda).exp())
        }
    }
}

/// Exact Poisson pmf, computed in log space.
pub fn pmf(lambda: f64, k: u64) -> f64 {
    (-lambda + k as f64 * lambda.ln() - ln_gamma(k as f64 + 1.0)).exp()
}

/// Exact upper tail `P(X >= k)`.
pub fn upper_tail(lambda: f64, k: u64) -> f64 {
    if k == 0 {
        return 1.0;
    }
    // P(X >= k) = P(lower incomplete) = gamma_lr(k, lambda).
    statrs::function::gamma::gamma_lr(k as f64, lambda)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn upper_tail_example() {
        // lambda=1, t=2: bound e^{-0.5 ln 2} = 2^{-1/2}.
        let b = poisson_bound(1.0, 2.0, BoundPart::UpperTail).unwrap();
        assert_relative_eq!(b, 0.5f64.sqrt(), epsilon = 1e-12);
        // Exact P(X>=2) = 1 - 2e^{-1} ~ 0.2642, below the bound.
        let exact = upper_tail(1.0, 2);
        assert_relative_eq!(exact, 1.0 - 2.0 * (-1.0f64).exp(), epsilon = 1e-10);
        assert!(exact <= b);
    }

    #[test]
    fn point_mass_example() {
        // lambda=4, n=4: exact pmf e^{-4} 4^4 / 4! ~ 0.19537 >= bound.
        let exact = pmf(4.0, 4);
        assert_relative_eq!(exact, 0.195366814813165, epsilon = 1e-12);
        let b = poisson_bound(4.0, 4.0, BoundPart::PointMass).unwrap();
        assert!(exact >= b, "exact {exact} vs bound {b}");
    }

    #[test]
    fn concentration_degenerate_t() {
        let b = poisson_bound(5.0, 0.0, BoundPart::Concentration).unwrap();
        assert_relative_eq!(b, 2.0, epsilon = 1e-15);
    }

    #[test]
    fn out_of_range_rejected() {
        assert!(poisson_bound(1.0, 1.0, BoundPart::UpperTail).is_err());
        assert!(poisson_bound(1.0, 1.5, BoundPart::Concentration).is_err());
        assert!(poisson_bound(4.0, 3.0, BoundPart::PointMass).is_err());
        assert!(poisson_bound(4.0, 4.5, BoundPart::PointMass).is_err());
    }

    #[test]
    fn bounds_respect_exact_law_on_grid() {
        for &lambda in &[0.5, 1.0, 3.0, 10.0, 40.0] {
            // Upper tail over a grid of t >= 2 lambda.
            for mult in [2.0f64, 2.5, 3.0, 4.0, 6.0] {
                let t = (mult * lambda).ceil();
                let b = poisson_bound(lambda, t, BoundPart::UpperTail).unwrap();
                assert!(upper_tail(lambda, t as u64) <= b * (1.0 + 1e-12));
            }
            // Point mass on integers above lambda.
            for n in (lambda.ceil() as u64).max(1)..(lambda.ceil() as u64 + 8) {
                let b = poisson_bound(lambda, n as f64, BoundPart::PointMass).unwrap();
                assert!(pmf(lambda, n) >= b * (1.0 - 1e-12), "lambda={lambda} n={n}");
            }
            // Concentration for t in [0, delta*lambda]; report-style check.
            for frac in [0.0, 0.3, 0.6, 1.0] {
                let t = frac * CONCENTRATION_DELTA * lambda;
                let b = poisson_bound(lambda, t, BoundPart::Concentration).unwrap();
                let lo = (lambda - t).floor() as i64 + 1;
                let hi = (lambda + t).ceil() as i64 - 1;
                let inside: f64 = (lo.max(0)..=hi.max(-1))
                    .map(|k| pmf(lambda, k as u64))
                    .sum();
                let exact = 1.0 - inside;
                assert!(
                    exact <= b * (1.0 + 1e-9),
                    "lambda={lambda} t={t} exact={exact} bound={b}"
                );
            }
        }
    }
}
