//! Approach 1: sample empirical likelihood with propensity-score calibration
//! constraints.
//!
//! Point estimation uses the reparameterized weights `q`, for which each arm
//! is an ordinary two-constraint EL problem. Inference profiles the joint
//! likelihood over `mu1` for each fixed `theta`.

use crate::data::ObservedSample;
use crate::el::{solve_dual, solve_dual_from, ConstraintMatrix};
use crate::elvar::{centered_covariance, influence_sel1, outer_mean, summarize, VarianceSummary};
use crate::error::{Arm, Error, Result};
use crate::intervals::{invert_ratio, Interval, RatioInterval};
use crate::models::FittedNuisance;
use crate::optim::maximize_concave;

pub(crate) const PROFILE_HALF_WIDTH_SE: f64 = 8.0;
const PROFILE_EXPANSIONS: usize = 6;
pub(crate) const PROFILE_TOL: f64 = 1e-6;

#[derive(Debug, Clone, serde::Serialize)]
pub struct Sel1Point {
    pub mu1_hat: f64,
    pub mu0_hat: f64,
    pub theta_hat: f64,
    pub lambda1q: [f64; 2],
    pub lambda0q: [f64; 2],
    /// `p`-scale weights on the treated units, in sample order.
    pub weights_p1: Vec<f64>,
    pub weights_p0: Vec<f64>,
    /// Maximized log-EL of both arms (constant terms omitted).
    pub loglik_global: f64,
}

/// Per-arm ingredients of the constraint vectors. Row `j` of an arm's
/// constraint matrix is `(cal_tau[j], cal_m[j], (y[j] - c) * inv[j])` where
/// `c` is `mu1` for the treated arm and `mu1 - theta` for the control arm.
#[derive(Debug, Clone)]
struct ArmParts {
    cal_tau: Vec<f64>,
    cal_m: Vec<f64>,
    inv: Vec<f64>,
    y: Vec<f64>,
}

impl ArmParts {
    fn calibration(&self) -> Result<ConstraintMatrix> {
        let data = self
            .cal_tau
            .iter()
            .zip(&self.cal_m)
            .flat_map(|(&a, &b)| [a, b])
            .collect();
        ConstraintMatrix::new(self.y.len(), 2, data)
    }

    fn with_mean(&self, c: f64) -> Option<ConstraintMatrix> {
        let mut data = Vec::with_capacity(3 * self.y.len());
        for j in 0..self.y.len() {
            data.extend_from_slice(&[
                self.cal_tau[j],
                self.cal_m[j],
                (self.y[j] - c) * self.inv[j],
            ]);
        }
        ConstraintMatrix::new(self.y.len(), 3, data).ok()
    }

    /// Rows of `g` at the given centring constant.
    fn rows(&self, c: f64) -> Vec<[f64; 3]> {
        (0..self.y.len())
            .map(|j| {
                [
                    self.cal_tau[j],
                    self.cal_m[j],
                    (self.y[j] - c) * self.inv[j],
                ]
            })
            .collect()
    }

    fn y_range(&self) -> (f64, f64) {
        self.y
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }
}

/// Warm-start multipliers carried across nearby profile evaluations.
#[derive(Debug, Clone, Default)]
struct Warm {
    treated: Option<Vec<f64>>,
    control: Option<Vec<f64>>,
}

fn arm_loglik(parts: &ArmParts, c: f64, warm: &mut Option<Vec<f64>>) -> f64 {
    let Some(g) = parts.with_mean(c) else {
        return f64::NEG_INFINITY;
    };
    let sol = match warm {
        Some(l) => solve_dual_from(&g, l),
        None => solve_dual(&g),
    };
    if sol.converged() {
        let value = sol.log_ratio();
        *warm = Some(sol.lambda);
        value
    } else {
        f64::NEG_INFINITY
    }
}

/// SEL1 fit on one sample: point estimate plus the machinery for the ratio
/// function and its calibration.
#[derive(Debug, Clone)]
pub struct Sel1<'a> {
    sample: &'a ObservedSample,
    nuisance: &'a FittedNuisance,
    treated: ArmParts,
    control: ArmParts,
    point: Sel1Point,
}

impl<'a> Sel1<'a> {
    pub fn new(sample: &'a ObservedSample, nuisance: &'a FittedNuisance) -> Result<Self> {
        let ps = &nuisance.ps;
        let or = &nuisance.or;
        let groups = &nuisance.groups;
        if groups.n1() < 3 || groups.n0() < 3 {
            return Err(Error::InvalidSample(
                "each arm needs at least 3 units".into(),
            ));
        }
        let tau_bar = ps.mean_tau();
        let y = sample.y();
        let treated = ArmParts {
            cal_tau: groups
                .s1
                .iter()
                .map(|&j| (ps.tau_hat[j] - tau_bar) / ps.tau_hat[j])
                .collect(),
            cal_m: groups
                .s1
                .iter()
                .map(|&j| (or.m1_hat[j] - or.mbar1) / ps.tau_hat[j])
                .collect(),
            inv: groups.s1.iter().map(|&j| 1.0 / ps.tau_hat[j]).collect(),
            y: groups.s1.iter().map(|&j| y[j]).collect(),
        };
        let control = ArmParts {
            cal_tau: groups
                .s0
                .iter()
                .map(|&j| (tau_bar - ps.tau_hat[j]) / (1.0 - ps.tau_hat[j]))
                .collect(),
            cal_m: groups
                .s0
                .iter()
                .map(|&j| (or.m0_hat[j] - or.mbar0) / (1.0 - ps.tau_hat[j]))
                .collect(),
            inv: groups
                .s0
                .iter()
                .map(|&j| 1.0 / (1.0 - ps.tau_hat[j]))
                .collect(),
            y: groups.s0.iter().map(|&j| y[j]).collect(),
        };

        let sol1 = solve_dual(&treated.calibration()?);
        if !sol1.converged() {
            return Err(Error::HullViolation(Arm::Treated));
        }
        let sol0 = solve_dual(&control.calibration()?);
        if !sol0.converged() {
            return Err(Error::HullViolation(Arm::Control));
        }
        // q-scale weights map back to p-scale through the arm's mean score.
        let weights_p1: Vec<f64> = sol1
            .weights
            .iter()
            .zip(&treated.inv)
            .map(|(q, inv)| q * tau_bar * inv)
            .collect();
        let weights_p0: Vec<f64> = sol0
            .weights
            .iter()
            .zip(&control.inv)
            .map(|(q, inv)| q * (1.0 - tau_bar) * inv)
            .collect();
        let mu1_hat = weights_p1
            .iter()
            .zip(&treated.y)
            .map(|(p, y)| p * y)
            .sum::<f64>();
        let mu0_hat = weights_p0
            .iter()
            .zip(&control.y)
            .map(|(p, y)| p * y)
            .sum::<f64>();
        let point = Sel1Point {
            mu1_hat,
            mu0_hat,
            theta_hat: mu1_hat - mu0_hat,
            lambda1q: [sol1.lambda[0], sol1.lambda[1]],
            lambda0q: [sol0.lambda[0], sol0.lambda[1]],
            weights_p1,
            weights_p0,
            loglik_global: sol1.log_ratio() + sol0.log_ratio(),
        };
        Ok(Self {
            sample,
            nuisance,
            treated,
            control,
            point,
        })
    }

    pub fn point(&self) -> &Sel1Point {
        &self.point
    }

    pub fn sample(&self) -> &ObservedSample {
        self.sample
    }

    /// Constraint vectors `(g1, g0)` at `(mu1, theta)`.
    pub fn g_vectors(&self, mu1: f64, theta: f64) -> (Vec<[f64; 3]>, Vec<[f64; 3]>) {
        (self.treated.rows(mu1), self.control.rows(mu1 - theta))
    }

    /// Joint profile log-EL at `(mu1, theta)`; `-inf` when either arm's
    /// constraints are infeasible.
    pub fn profile_loglik(&self, mu1: f64, theta: f64) -> f64 {
        self.profile_loglik_warm(mu1, theta, &mut Warm::default())
    }

    fn profile_loglik_warm(&self, mu1: f64, theta: f64, warm: &mut Warm) -> f64 {
        let l1 = arm_loglik(&self.treated, mu1, &mut warm.treated);
        if l1 == f64::NEG_INFINITY {
            return l1;
        }
        l1 + arm_loglik(&self.control, mu1 - theta, &mut warm.control)
    }

    /// Maximizer over `mu1` of the profile log-EL at fixed `theta`, searched
    /// on a window of `8 se_mu1` around the point estimate.
    pub fn profile_mu1(&self, theta: f64, se_mu1: f64) -> Result<(f64, f64)> {
        let (lo1, hi1) = self.treated.y_range();
        let (lo0, hi0) = self.control.y_range();
        // The third constraint needs sign changes in both arms.
        let (lo, hi) = (lo1.max(lo0 + theta), hi1.min(hi0 + theta));
        if !(lo < hi) {
            return Err(Error::HullViolation(if lo1 >= hi1 {
                Arm::Treated
            } else {
                Arm::Control
            }));
        }
        let centre = self.point.mu1_hat;
        let probes = [
            centre,
            centre.clamp(lo + 0.25 * (hi - lo), hi - 0.25 * (hi - lo)),
            0.5 * (lo + hi),
        ];
        let half = if se_mu1 > 0.0 && se_mu1.is_finite() {
            PROFILE_HALF_WIDTH_SE * se_mu1
        } else {
            0.25 * (hi - lo)
        };
        let mut warm = Warm::default();
        maximize_concave(
            |m| self.profile_loglik_warm(m, theta, &mut warm),
            &probes,
            half,
            PROFILE_EXPANSIONS,
            PROFILE_TOL,
        )
        .ok_or(Error::HullViolation(Arm::Control))
    }

    /// `r(theta) = max_mu1 l(mu1, theta) - l_global`, clipped at zero;
    /// `-inf` when no feasible `mu1` exists.
    pub fn ratio(&self, theta: f64, se_mu1: f64) -> f64 {
        match self.profile_mu1(theta, se_mu1) {
            Ok((_, l)) => (l - self.point.loglik_global).min(0.0),
            Err(_) => f64::NEG_INFINITY,
        }
    }
}

impl RatioInterval for Sel1<'_> {
    fn theta_hat(&self) -> f64 {
        self.point.theta_hat
    }

    /// Plug-in scaling constant and sandwich variance at the point estimate.
    fn variance(&self) -> Result<VarianceSummary> {
        let n = self.sample.n();
        let (mu1, theta) = (self.point.mu1_hat, self.point.theta_hat);
        let b = influence_sel1(
            self.sample,
            &self.nuisance.ps,
            &self.nuisance.or,
            mu1,
            theta,
        )?;
        let omega = centered_covariance(&b);
        let (g1, g0) = self.g_vectors(mu1, theta);
        let w1 = outer_mean(g1.iter().map(|r| &r[..]), 3, n);
        let w0 = outer_mean(g0.iter().map(|r| &r[..]), 3, n);
        summarize(omega, &w1, &w0, n)
    }

    /// `{theta : r(theta) > level}`.
    fn ci_at_level(&self, variance: &VarianceSummary, level: f64) -> Result<Interval> {
        let se_mu1 = variance.se_mu1();
        invert_ratio(
            |t| self.ratio(t, se_mu1),
            self.point.theta_hat,
            variance.se_theta(),
            level,
        )
    }
}
