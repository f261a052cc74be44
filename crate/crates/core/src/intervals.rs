//! Confidence intervals obtained by inverting a log-likelihood-ratio function.

use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::elvar::VarianceSummary;
use crate::error::{Error, Result};
use crate::optim::bisect_crossing;

pub(crate) const INITIAL_SE_MULTIPLE: f64 = 4.0;
const MAX_EXPANSIONS: usize = 6;
pub(crate) const ENDPOINT_TOL_SE: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Interval {
    pub lower: f64,
    pub upper: f64,
    /// Ratio evaluations that failed (treated as outside the interval).
    pub hull_failures: usize,
}

impl Interval {
    pub fn length(&self) -> f64 {
        self.upper - self.lower
    }

    pub fn contains(&self, theta: f64) -> bool {
        self.lower <= theta && theta <= self.upper
    }
}

/// A fitted estimator whose ratio function can be inverted into intervals.
pub trait RatioInterval {
    fn theta_hat(&self) -> f64;

    fn variance(&self) -> Result<VarianceSummary>;

    /// `{theta : r(theta) > level}` on the fitted sample.
    fn ci_at_level(&self, variance: &VarianceSummary, level: f64) -> Result<Interval>;

    /// Scaled chi-square interval `{theta : -2 r(theta) / delta <= chi2_1(alpha)}`.
    fn ci_chisq(&self, variance: &VarianceSummary, alpha: f64) -> Result<Interval> {
        let level = scaled_chisq_level(variance.delta, alpha)?;
        self.ci_at_level(variance, level)
    }
}

/// Upper-`alpha` quantile of the chi-square distribution with one degree of freedom.
pub fn chisq1_quantile(alpha: f64) -> f64 {
    ChiSquared::new(1.0)
        .expect("valid dof")
        .inverse_cdf(1.0 - alpha)
}

/// Chi-square(1) distribution function.
pub fn chisq1_cdf(x: f64) -> f64 {
    ChiSquared::new(1.0).expect("valid dof").cdf(x)
}

/// Ratio level at which `-2 r / delta` equals the chi-square critical value.
pub fn scaled_chisq_level(delta: f64, alpha: f64) -> Result<f64> {
    if !(delta > 0.0 && delta.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "scaling constant must be positive, got {delta}"
        )));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "alpha must lie in (0, 1), got {alpha}"
        )));
    }
    Ok(-0.5 * delta * chisq1_quantile(alpha))
}

/// `{theta : r(theta) > level}` for a ratio function that is zero at
/// `theta_hat` and decreases away from it.
///
/// Each endpoint is bracketed starting `4 se` from `theta_hat` (doubling the
/// offset up to six times) and then located by bisection to `1e-5 se`.
/// Non-finite ratio values count as outside the interval.
pub fn invert_ratio(
    mut ratio: impl FnMut(f64) -> f64,
    theta_hat: f64,
    se: f64,
    level: f64,
) -> Result<Interval> {
    if !(se > 0.0 && se.is_finite()) {
        return Err(Error::Bracket(format!(
            "standard error {se} cannot set a bracket"
        )));
    }
    if !(level < 0.0) {
        return Err(Error::Bracket(format!("level {level} must be negative")));
    }
    let mut failures = 0;
    let mut r = |theta: f64| {
        let v = ratio(theta);
        if v.is_finite() {
            v
        } else {
            failures += 1;
            f64::NEG_INFINITY
        }
    };
    let endpoint = |dir: f64, r: &mut dyn FnMut(f64) -> f64| -> Result<f64> {
        let mut inside = theta_hat;
        let mut width = INITIAL_SE_MULTIPLE * se;
        let mut outside = theta_hat + dir * width;
        let mut expansions = 0;
        while r(outside) > level {
            if expansions == MAX_EXPANSIONS {
                return Err(Error::Bracket(format!(
                    "ratio stays above {level:.4} up to {:.4}",
                    outside
                )));
            }
            inside = outside;
            width *= 2.0;
            outside = theta_hat + dir * width;
            expansions += 1;
        }
        Ok(bisect_crossing(
            &mut *r,
            level,
            inside,
            outside,
            ENDPOINT_TOL_SE * se,
        ))
    };
    let lower = endpoint(-1.0, &mut r)?;
    let upper = endpoint(1.0, &mut r)?;
    Ok(Interval {
        lower,
        upper,
        hull_failures: failures,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn chisq_critical_value() {
        assert_abs_diff_eq!(chisq1_quantile(0.05), 3.841_458_820_694_124, epsilon = 1e-9);
    }

    #[test]
    fn quadratic_ratio_gives_wald_interval() {
        // r = -(theta - 1)^2 / (2 s^2)  =>  endpoints 1 +- 1.96 s.
        let s = 0.3;
        let level = scaled_chisq_level(1.0, 0.05).unwrap();
        let ci = invert_ratio(|t| -(t - 1.0).powi(2) / (2.0 * s * s), 1.0, s, level).unwrap();
        let z = chisq1_quantile(0.05).sqrt();
        assert_abs_diff_eq!(ci.lower, 1.0 - z * s, epsilon = 1e-5 * s);
        assert_abs_diff_eq!(ci.upper, 1.0 + z * s, epsilon = 1e-5 * s);
        assert_eq!(ci.hull_failures, 0);
    }

    #[test]
    fn underestimated_se_is_expanded() {
        let ci = invert_ratio(|t| -t * t / 2.0, 0.0, 0.1, -2.0).unwrap();
        assert_abs_diff_eq!(ci.upper, 2.0, epsilon = 1e-5);
    }

    #[test]
    fn failures_count_as_outside() {
        let ci = invert_ratio(
            |t| if t > 1.5 { f64::NAN } else { -t * t / 2.0 },
            0.0,
            1.0,
            -2.0,
        )
        .unwrap();
        assert_abs_diff_eq!(ci.upper, 1.5, epsilon = 1e-4);
        assert!(ci.hull_failures > 0);
    }

    #[test]
    fn flat_ratio_is_a_bracket_error() {
        assert!(matches!(
            invert_ratio(|_| 0.0, 0.0, 1.0, -1.0),
            Err(Error::Bracket(_))
        ));
    }

    #[test]
    fn invalid_scaling() {
        assert!(scaled_chisq_level(0.0, 0.05).is_err());
        assert!(scaled_chisq_level(1.0, 1.5).is_err());
    }
}
