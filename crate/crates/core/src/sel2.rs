//! Approach 2: sample empirical likelihood with propensity-score weighted
//! calibration and parameter constraints.
//!
//! The ratio function is computed by a joint Newton-Raphson solve of the
//! score equations in `phi = (lambda1, lambda0, mu1)` at each fixed `theta`.

use nalgebra::{DMatrix, DVector};

use crate::data::ObservedSample;
use crate::el::{pinv_solve, solve_dual, ConstraintMatrix};
use crate::elvar::{centered_covariance, influence_sel2, outer_mean, summarize, VarianceSummary};
use crate::error::{Arm, Error, Result};
use crate::intervals::{invert_ratio, Interval, RatioInterval};
use crate::models::FittedNuisance;

pub(crate) const PHI_TOL: f64 = 1e-9;
pub(crate) const PHI_MAX_ITER: usize = 100;
const MAX_HALVINGS: usize = 50;

#[derive(Debug, Clone, serde::Serialize)]
pub struct Sel2Point {
    pub mu1_hat: f64,
    pub mu0_hat: f64,
    pub theta_hat: f64,
    pub lambda1: f64,
    pub lambda0: f64,
    pub weights_p1: Vec<f64>,
    pub weights_p0: Vec<f64>,
    pub loglik_global: f64,
}

/// Solution of the joint score equations at one `theta`.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct PhiSolution {
    pub lambda1: [f64; 2],
    pub lambda0: [f64; 2],
    pub mu1: f64,
    pub converged: bool,
    pub iterations: usize,
    /// Profile log-EL at the solution (constant terms omitted).
    pub loglik: f64,
}

impl PhiSolution {
    fn from_vec(phi: &DVector<f64>, converged: bool, iterations: usize, loglik: f64) -> Self {
        Self {
            lambda1: [phi[0], phi[1]],
            lambda0: [phi[2], phi[3]],
            mu1: phi[4],
            converged,
            iterations,
            loglik,
        }
    }

    fn to_vec(self) -> DVector<f64> {
        DVector::from_column_slice(&[
            self.lambda1[0],
            self.lambda1[1],
            self.lambda0[0],
            self.lambda0[1],
            self.mu1,
        ])
    }
}

/// Per-arm ingredients: the constraint vector of unit `j` is
/// `(cal[j], (y[j] - c) * inv[j])` with `c = mu1` (treated) or
/// `c = mu1 - theta` (control).
#[derive(Debug, Clone)]
struct ArmParts {
    cal: Vec<f64>,
    inv: Vec<f64>,
    y: Vec<f64>,
}

impl ArmParts {
    fn len(&self) -> usize {
        self.y.len()
    }

    fn g(&self, j: usize, c: f64) -> [f64; 2] {
        [self.cal[j], (self.y[j] - c) * self.inv[j]]
    }
}

/// Contributions of one arm to the score, the Jacobian and the objective.
struct ArmTerms {
    /// `-sum g / z`.
    score_lambda: [f64; 2],
    /// `sum lambda' (-dg/dmu) / z`.
    score_mu: f64,
    hess_ll: [[f64; 2]; 2],
    hess_lmu: [f64; 2],
    hess_mumu: f64,
    loglik: f64,
    /// `sum_j 1 / (n_i z_j)`, which equals one at a genuine solution.
    mass: f64,
}

fn arm_terms(parts: &ArmParts, lambda: [f64; 2], c: f64) -> Option<ArmTerms> {
    let floor = 1.0 / parts.len() as f64;
    let mut t = ArmTerms {
        score_lambda: [0.0; 2],
        score_mu: 0.0,
        hess_ll: [[0.0; 2]; 2],
        hess_lmu: [0.0; 2],
        hess_mumu: 0.0,
        loglik: 0.0,
        mass: 0.0,
    };
    for j in 0..parts.len() {
        let g = parts.g(j, c);
        let z = 1.0 + lambda[0] * g[0] + lambda[1] * g[1];
        if !(z > floor) {
            return None;
        }
        let w = 1.0 / z;
        let w2 = w * w;
        // d g / d mu1 = (0, -inv).
        let ld = -lambda[1] * parts.inv[j];
        t.loglik -= z.ln();
        for a in 0..2 {
            t.score_lambda[a] -= g[a] * w;
            for b in 0..2 {
                t.hess_ll[a][b] += g[a] * g[b] * w2;
            }
            let d_a = if a == 1 { -parts.inv[j] } else { 0.0 };
            t.hess_lmu[a] -= d_a * w - g[a] * ld * w2;
        }
        t.score_mu -= ld * w;
        t.hess_mumu += ld * ld * w2;
        t.mass += w * floor;
    }
    Some(t)
}

struct System {
    score: DVector<f64>,
    jac: DMatrix<f64>,
    loglik: f64,
    mass_gap: f64,
}

#[derive(Debug, Clone)]
pub struct Sel2<'a> {
    sample: &'a ObservedSample,
    nuisance: &'a FittedNuisance,
    treated: ArmParts,
    control: ArmParts,
    point: Sel2Point,
}

impl<'a> Sel2<'a> {
    pub fn new(sample: &'a ObservedSample, nuisance: &'a FittedNuisance) -> Result<Self> {
        let ps = &nuisance.ps;
        let or = &nuisance.or;
        let groups = &nuisance.groups;
        if groups.n1() < 3 || groups.n0() < 3 {
            return Err(Error::InvalidSample(
                "each arm needs at least 3 units".into(),
            ));
        }
        let y = sample.y();
        let treated = ArmParts {
            cal: groups
                .s1
                .iter()
                .map(|&j| (or.m1_hat[j] - or.mbar1) / ps.tau_hat[j])
                .collect(),
            inv: groups.s1.iter().map(|&j| 1.0 / ps.tau_hat[j]).collect(),
            y: groups.s1.iter().map(|&j| y[j]).collect(),
        };
        let control = ArmParts {
            cal: groups
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
        let sol1 = solve_dual(&ConstraintMatrix::from_column(&treated.cal)?);
        if !sol1.converged() {
            return Err(Error::HullViolation(Arm::Treated));
        }
        let sol0 = solve_dual(&ConstraintMatrix::from_column(&control.cal)?);
        if !sol0.converged() {
            return Err(Error::HullViolation(Arm::Control));
        }
        let weighted_mean = |p: &[f64], parts: &ArmParts| {
            let num: f64 = p
                .iter()
                .zip(&parts.inv)
                .zip(&parts.y)
                .map(|((p, i), y)| p * i * y)
                .sum();
            let den: f64 = p.iter().zip(&parts.inv).map(|(p, i)| p * i).sum();
            num / den
        };
        let mu1_hat = weighted_mean(&sol1.weights, &treated);
        let mu0_hat = weighted_mean(&sol0.weights, &control);
        let point = Sel2Point {
            mu1_hat,
            mu0_hat,
            theta_hat: mu1_hat - mu0_hat,
            lambda1: sol1.lambda[0],
            lambda0: sol0.lambda[0],
            loglik_global: sol1.log_ratio() + sol0.log_ratio(),
            weights_p1: sol1.weights,
            weights_p0: sol0.weights,
        };
        Ok(Self {
            sample,
            nuisance,
            treated,
            control,
            point,
        })
    }

    pub fn point(&self) -> &Sel2Point {
        &self.point
    }

    /// Constraint vectors `(g1^S, g0^S)` at `(mu1, theta)`.
    pub fn g_vectors(&self, mu1: f64, theta: f64) -> (Vec<[f64; 2]>, Vec<[f64; 2]>) {
        (
            (0..self.treated.len())
                .map(|j| self.treated.g(j, mu1))
                .collect(),
            (0..self.control.len())
                .map(|j| self.control.g(j, mu1 - theta))
                .collect(),
        )
    }

    /// Default starting point: zero multipliers and the point estimate of `mu1`.
    pub fn default_init(&self) -> PhiSolution {
        PhiSolution {
            lambda1: [0.0; 2],
            lambda0: [0.0; 2],
            mu1: self.point.mu1_hat,
            converged: false,
            iterations: 0,
            loglik: f64::NAN,
        }
    }

    /// Score vector, Jacobian and objective at `phi`, or `None` outside the
    /// domain `1 + lambda' g > 1 / n_i`.
    fn system(&self, phi: &DVector<f64>, theta: f64) -> Option<System> {
        let t1 = arm_terms(&self.treated, [phi[0], phi[1]], phi[4])?;
        let t0 = arm_terms(&self.control, [phi[2], phi[3]], phi[4] - theta)?;
        let score = DVector::from_column_slice(&[
            t1.score_lambda[0],
            t1.score_lambda[1],
            t0.score_lambda[0],
            t0.score_lambda[1],
            t1.score_mu + t0.score_mu,
        ]);
        let mut jac = DMatrix::zeros(5, 5);
        for a in 0..2 {
            for b in 0..2 {
                jac[(a, b)] = t1.hess_ll[a][b];
                jac[(2 + a, 2 + b)] = t0.hess_ll[a][b];
            }
            jac[(a, 4)] = t1.hess_lmu[a];
            jac[(4, a)] = t1.hess_lmu[a];
            jac[(2 + a, 4)] = t0.hess_lmu[a];
            jac[(4, 2 + a)] = t0.hess_lmu[a];
        }
        jac[(4, 4)] = t1.hess_mumu + t0.hess_mumu;
        let mass_gap = (t1.mass - 1.0).abs().max((t0.mass - 1.0).abs());
        Some(System {
            score,
            jac,
            loglik: t1.loglik + t0.loglik,
            mass_gap,
        })
    }

    /// Damped Newton-Raphson for the score equations at `theta`.
    ///
    /// The solution is a saddle point (minimum in the multipliers, maximum in
    /// `mu1`), so steps are accepted on decrease of the score norm rather than
    /// of the objective.
    pub fn solve_phi(&self, theta: f64, init: Option<&PhiSolution>) -> PhiSolution {
        let start = init.copied().unwrap_or_else(|| self.default_init());
        let mut phi = start.to_vec();
        let Some(mut sys) = self.system(&phi, theta) else {
            return PhiSolution {
                converged: false,
                ..start
            };
        };
        let scale = self
            .treated
            .cal
            .iter()
            .chain(&self.control.cal)
            .fold(1.0_f64, |a, v| a.max(v.abs()));
        let tol = PHI_TOL * scale;
        let n = self.sample.n() as f64;
        for iter in 0..PHI_MAX_ITER {
            let norm = sys.score.amax();
            // The score also vanishes as the multipliers diverge, which is
            // how an infeasible arm shows up; the weights then lose mass.
            if norm < tol && sys.mass_gap < 1e-8 {
                return PhiSolution::from_vec(&phi, true, iter, sys.loglik);
            }
            if sys.loglik < -30.0 * n {
                break;
            }
            let step = match sys.jac.clone().lu().solve(&(-&sys.score)) {
                Some(s) if s.iter().all(|v| v.is_finite()) => s,
                _ => -pinv_solve(&sys.jac, &sys.score),
            };
            let mut s = 1.0;
            let mut accepted = false;
            for _ in 0..MAX_HALVINGS {
                let cand = &phi + &step * s;
                if let Some(next) = self.system(&cand, theta) {
                    let next_norm = next.score.amax();
                    if next_norm < norm * (1.0 - 1e-4 * s) || next_norm < tol {
                        phi = cand;
                        sys = next;
                        accepted = true;
                        break;
                    }
                }
                s *= 0.5;
            }
            if !accepted {
                return PhiSolution::from_vec(&phi, false, iter, sys.loglik);
            }
        }
        let converged = sys.score.amax() < tol && sys.mass_gap < 1e-8;
        PhiSolution::from_vec(&phi, converged, PHI_MAX_ITER, sys.loglik)
    }

    /// Solve from `init`, retrying from the default start on failure.
    pub fn solve_phi_robust(&self, theta: f64, init: Option<&PhiSolution>) -> PhiSolution {
        let sol = self.solve_phi(theta, init);
        if sol.converged || init.is_none() {
            return sol;
        }
        self.solve_phi(theta, None)
    }

    /// `r(theta)` from a converged joint solve, clipped at zero; `-inf` when
    /// the solve fails.
    pub fn ratio(&self, theta: f64) -> f64 {
        self.ratio_from(theta, None).0
    }

    fn ratio_from(&self, theta: f64, init: Option<&PhiSolution>) -> (f64, PhiSolution) {
        let sol = self.solve_phi_robust(theta, init);
        let r = if sol.converged {
            (sol.loglik - self.point.loglik_global).min(0.0)
        } else {
            f64::NEG_INFINITY
        };
        (r, sol)
    }

    /// Ratio function that warm-starts each solve from the converged solution
    /// at the previously evaluated `theta`.
    pub fn ratio_fn(&self) -> impl FnMut(f64) -> f64 + '_ {
        let mut last: Option<PhiSolution> = None;
        move |theta| {
            let (r, sol) = self.ratio_from(theta, last.as_ref());
            if sol.converged {
                last = Some(sol);
            }
            r
        }
    }
}

impl RatioInterval for Sel2<'_> {
    fn theta_hat(&self) -> f64 {
        self.point.theta_hat
    }

    fn variance(&self) -> Result<VarianceSummary> {
        let n = self.sample.n();
        let (mu1, theta) = (self.point.mu1_hat, self.point.theta_hat);
        let b = influence_sel2(
            self.sample,
            &self.nuisance.ps,
            &self.nuisance.or,
            mu1,
            theta,
        )?;
        let omega = centered_covariance(&b);
        let (g1, g0) = self.g_vectors(mu1, theta);
        let w1 = outer_mean(g1.iter().map(|r| &r[..]), 2, n);
        let w0 = outer_mean(g0.iter().map(|r| &r[..]), 2, n);
        summarize(omega, &w1, &w0, n)
    }

    fn ci_at_level(&self, variance: &VarianceSummary, level: f64) -> Result<Interval> {
        invert_ratio(
            self.ratio_fn(),
            self.point.theta_hat,
            variance.se_theta(),
            level,
        )
    }
}
