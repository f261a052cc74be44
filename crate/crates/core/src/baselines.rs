//! Reference estimators of the average treatment effect.

use crate::data::{GroupIndex, ObservedSample};
use crate::models::{OrFit, PsFit};

/// Difference of the two arm means.
pub fn naive_diff(sample: &ObservedSample, groups: &GroupIndex) -> f64 {
    let y = sample.y();
    let mean = |rows: &[usize]| rows.iter().map(|&j| y[j]).sum::<f64>() / rows.len() as f64;
    mean(&groups.s1) - mean(&groups.s0)
}

/// Horvitz-Thompson type inverse probability weighting.
pub fn ipw(sample: &ObservedSample, ps: &PsFit) -> f64 {
    let n = sample.n() as f64;
    let total: f64 = sample
        .y()
        .iter()
        .zip(sample.t())
        .zip(&ps.tau_hat)
        .map(|((&y, &t), &tau)| if t { y / tau } else { -y / (1.0 - tau) })
        .sum();
    total / n
}

/// Inverse probability weighting with weights normalized within each arm.
pub fn hajek_ipw(sample: &ObservedSample, ps: &PsFit) -> f64 {
    let (mut num1, mut den1, mut num0, mut den0) = (0.0, 0.0, 0.0, 0.0);
    for ((&y, &t), &tau) in sample.y().iter().zip(sample.t()).zip(&ps.tau_hat) {
        if t {
            num1 += y / tau;
            den1 += 1.0 / tau;
        } else {
            num0 += y / (1.0 - tau);
            den0 += 1.0 / (1.0 - tau);
        }
    }
    num1 / den1 - num0 / den0
}

/// Augmented IPW: regression imputation plus inverse-weighted residuals.
pub fn aipw(sample: &ObservedSample, ps: &PsFit, or: &OrFit) -> f64 {
    let n = sample.n() as f64;
    let mut mu1 = 0.0;
    let mut mu0 = 0.0;
    for j in 0..sample.n() {
        let (y, tau) = (sample.y()[j], ps.tau_hat[j]);
        let (r1, r0) = if sample.t()[j] {
            ((y - or.m1_hat[j]) / tau, 0.0)
        } else {
            (0.0, (y - or.m0_hat[j]) / (1.0 - tau))
        };
        mu1 += or.m1_hat[j] + r1;
        mu0 += or.m0_hat[j] + r0;
    }
    (mu1 - mu0) / n
}
