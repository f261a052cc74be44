//! Working nuisance models: a logistic propensity score fitted by IRLS and
//! per-arm linear outcome regressions fitted by least squares.

use nalgebra::{DMatrix, DVector};

use crate::data::{GroupIndex, ObservedSample};
use crate::error::{Error, Result};

pub(crate) const PS_MAX_ITER: usize = 50;
pub(crate) const PS_SCORE_TOL: f64 = 1e-8;
const PS_STEP_TOL: f64 = 1e-10;
/// Fitted scores outside `[POSITIVITY_EPS, 1 - POSITIVITY_EPS]` raise a warning.
pub const POSITIVITY_EPS: f64 = 1e-10;

/// Covariate subsets (0-based column indices of the sample's `x`) used by
/// each working model. An intercept is always added.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct ModelSpec {
    pub ps_covariates: Vec<usize>,
    pub or1_covariates: Vec<usize>,
    pub or0_covariates: Vec<usize>,
}

impl ModelSpec {
    pub fn new(ps_covariates: Vec<usize>, or_covariates: Vec<usize>) -> Self {
        Self {
            ps_covariates,
            or1_covariates: or_covariates.clone(),
            or0_covariates: or_covariates,
        }
    }

    /// Every covariate in every model.
    pub fn full(p: usize) -> Self {
        Self::new((0..p).collect(), (0..p).collect())
    }

    /// Intercept-only models.
    pub fn intercept_only() -> Self {
        Self::new(Vec::new(), Vec::new())
    }

    fn validate(&self, p: usize) -> Result<()> {
        let all = self
            .ps_covariates
            .iter()
            .chain(&self.or1_covariates)
            .chain(&self.or0_covariates);
        for &c in all {
            if c >= p {
                return Err(Error::InvalidArgument(format!(
                    "covariate index {c} out of range for {p} covariates"
                )));
            }
        }
        Ok(())
    }
}

/// `n x (1 + cols.len())` design with a leading column of ones.
pub fn design_matrix(x: &DMatrix<f64>, cols: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(x.nrows(), cols.len() + 1, |i, k| {
        if k == 0 {
            1.0
        } else {
            x[(i, cols[k - 1])]
        }
    })
}

fn expit(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// log(1 + exp(z)) without overflow.
fn log1pexp(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

#[derive(Debug, Clone)]
pub struct PsFit {
    pub alpha: DVector<f64>,
    pub tau_hat: Vec<f64>,
    pub design: DMatrix<f64>,
    pub iterations: usize,
    /// Number of units whose fitted score falls outside `[1e-10, 1 - 1e-10]`.
    pub positivity_violations: usize,
}

impl PsFit {
    pub fn mean_tau(&self) -> f64 {
        self.tau_hat.iter().sum::<f64>() / self.tau_hat.len() as f64
    }
}

fn check_full_rank(design: &DMatrix<f64>, what: &str) -> Result<()> {
    let gram = design.transpose() * design;
    let eig = gram.symmetric_eigenvalues();
    let max = eig.iter().cloned().fold(0.0_f64, f64::max);
    let min = eig.iter().cloned().fold(f64::INFINITY, f64::min);
    if !(max > 0.0) || min <= 1e-12 * max {
        return Err(Error::RankDeficient(what.to_string()));
    }
    Ok(())
}

fn logistic_loglik(design: &DMatrix<f64>, t: &[bool], alpha: &DVector<f64>) -> f64 {
    let eta = design * alpha;
    eta.iter()
        .zip(t)
        .map(|(&e, &ti)| if ti { e } else { 0.0 } - log1pexp(e))
        .sum()
}

/// Maximum likelihood logistic regression of the treatment indicator on the
/// propensity covariates, by Newton-Raphson (IRLS) with step halving.
pub fn fit_logistic_ps(sample: &ObservedSample, spec: &ModelSpec) -> Result<PsFit> {
    spec.validate(sample.p())?;
    let design = design_matrix(sample.x(), &spec.ps_covariates);
    check_full_rank(&design, "propensity score model")?;
    let t = sample.t();
    let n = sample.n();
    let k = design.ncols();
    let tv = DVector::from_iterator(n, t.iter().map(|&b| if b { 1.0 } else { 0.0 }));

    let mut alpha = DVector::zeros(k);
    let mut ll = logistic_loglik(&design, t, &alpha);
    for iter in 1..=PS_MAX_ITER {
        let eta = &design * &alpha;
        let tau = eta.map(expit);
        let score = design.transpose() * (&tv - &tau);
        if score.amax() < PS_SCORE_TOL {
            return finish_ps(design, alpha, iter - 1);
        }
        let mut info = DMatrix::zeros(k, k);
        for i in 0..n {
            let w = tau[i] * (1.0 - tau[i]);
            let row = design.row(i);
            info.ger(w, &row.transpose(), &row.transpose(), 1.0);
        }
        let step = info
            .cholesky()
            .map(|c| c.solve(&score))
            .ok_or_else(|| separation(iter))?;

        let mut scale = 1.0;
        let mut next = &alpha + &step;
        let mut next_ll = logistic_loglik(&design, t, &next);
        let mut halvings = 0;
        while !(next_ll >= ll) && halvings < 30 {
            scale *= 0.5;
            next = &alpha + &step * scale;
            next_ll = logistic_loglik(&design, t, &next);
            halvings += 1;
        }
        let rel_change = (&next - &alpha).amax() / alpha.amax().max(1.0);
        alpha = next;
        ll = next_ll;

        // A vanishing deviance means the treatment is perfectly predicted.
        if -ll < 1e-7 {
            return Err(separation(iter));
        }
        if rel_change < PS_STEP_TOL {
            return finish_ps(design, alpha, iter);
        }
    }
    Err(separation(PS_MAX_ITER))
}

fn separation(iterations: usize) -> Error {
    Error::NonConvergence {
        what: "propensity score fit (possible complete separation)".into(),
        iterations,
    }
}

fn finish_ps(design: DMatrix<f64>, alpha: DVector<f64>, iterations: usize) -> Result<PsFit> {
    let tau_hat: Vec<f64> = (&design * &alpha).iter().map(|&e| expit(e)).collect();
    let positivity_violations = tau_hat
        .iter()
        .filter(|&&p| !(POSITIVITY_EPS..=1.0 - POSITIVITY_EPS).contains(&p))
        .count();
    if positivity_violations > 0 {
        log::warn!("{positivity_violations} fitted propensity scores are extreme (positivity)");
    }
    Ok(PsFit {
        alpha,
        tau_hat,
        design,
        iterations,
        positivity_violations,
    })
}

#[derive(Debug, Clone)]
pub struct OrFit {
    pub beta1: DVector<f64>,
    pub beta0: DVector<f64>,
    pub m1_hat: Vec<f64>,
    pub m0_hat: Vec<f64>,
    pub mbar1: f64,
    pub mbar0: f64,
}

fn ols_arm(
    sample: &ObservedSample,
    rows: &[usize],
    cols: &[usize],
    what: &str,
) -> Result<DVector<f64>> {
    let k = cols.len() + 1;
    if rows.len() <= k {
        return Err(Error::InvalidSample(format!(
            "{what} has {} units but needs more than {k}",
            rows.len()
        )));
    }
    let design = DMatrix::from_fn(rows.len(), k, |i, c| {
        if c == 0 {
            1.0
        } else {
            sample.x()[(rows[i], cols[c - 1])]
        }
    });
    check_full_rank(&design, what)?;
    let y = DVector::from_iterator(rows.len(), rows.iter().map(|&j| sample.y()[j]));
    // Householder QR is better conditioned than the normal equations.
    let qr = design.qr();
    let qty = qr.q().transpose() * &y;
    qr.r()
        .solve_upper_triangular(&qty)
        .ok_or_else(|| Error::RankDeficient(what.to_string()))
}

/// Per-arm least-squares outcome regressions, with predictions for every unit.
pub fn fit_ols_outcomes(
    sample: &ObservedSample,
    groups: &GroupIndex,
    spec: &ModelSpec,
) -> Result<OrFit> {
    spec.validate(sample.p())?;
    let beta1 = ols_arm(
        sample,
        &groups.s1,
        &spec.or1_covariates,
        "treated-arm outcome model",
    )?;
    let beta0 = ols_arm(
        sample,
        &groups.s0,
        &spec.or0_covariates,
        "control-arm outcome model",
    )?;
    let m1_hat: Vec<f64> = (design_matrix(sample.x(), &spec.or1_covariates) * &beta1)
        .iter()
        .copied()
        .collect();
    let m0_hat: Vec<f64> = (design_matrix(sample.x(), &spec.or0_covariates) * &beta0)
        .iter()
        .copied()
        .collect();
    let n = sample.n() as f64;
    let mbar1 = m1_hat.iter().sum::<f64>() / n;
    let mbar0 = m0_hat.iter().sum::<f64>() / n;
    Ok(OrFit {
        beta1,
        beta0,
        m1_hat,
        m0_hat,
        mbar1,
        mbar0,
    })
}

/// Both working models fitted on one sample.
#[derive(Debug, Clone)]
pub struct FittedNuisance {
    pub spec: ModelSpec,
    pub groups: GroupIndex,
    pub ps: PsFit,
    pub or: OrFit,
}

pub fn fit_nuisance(sample: &ObservedSample, spec: &ModelSpec) -> Result<FittedNuisance> {
    let groups = crate::data::split_groups(sample);
    let ps = fit_logistic_ps(sample, spec)?;
    let or = fit_ols_outcomes(sample, &groups, spec)?;
    Ok(FittedNuisance {
        spec: spec.clone(),
        groups,
        ps,
        or,
    })
}
