//! Bootstrap calibration of the SEL ratio statistics.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::data::ObservedSample;
use crate::elvar::VarianceSummary;
use crate::error::{Error, Result};
use crate::intervals::{Interval, RatioInterval};
use crate::models::{fit_nuisance, FittedNuisance, ModelSpec};
use crate::sel1::Sel1;
use crate::sel2::Sel2;

/// Minimum number of bootstrap replicates accepted.
pub const MIN_REPLICATES: usize = 100;
/// Degenerate resamples are redrawn at most this many times.
pub const MAX_REDRAWS: usize = 10;
/// Larger failure fractions abort the run.
pub const MAX_FAILED_FRACTION: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SelMethod {
    Sel1,
    Sel2,
}

impl std::fmt::Display for SelMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SelMethod::Sel1 => f.write_str("sel1"),
            SelMethod::Sel2 => f.write_str("sel2"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct BootstrapRun {
    /// Requested number of replicates.
    pub b: usize,
    /// Bootstrap ratios at the original estimate, sorted ascending.
    pub ratios: Vec<f64>,
    pub n_failed: usize,
    pub seed: u64,
}

/// Random stream of replicate `b`, independent of every other replicate.
fn replicate_rng(seed: u64, b: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(b as u64);
    rng
}

/// True when a resample leaves too few units in an arm to fit its outcome model.
fn degenerate(sample: &ObservedSample, rows: &[usize], spec: &ModelSpec) -> bool {
    let n1 = rows.iter().filter(|&&j| sample.t()[j]).count();
    let n0 = rows.len() - n1;
    n1 < (spec.or1_covariates.len() + 2).max(3) || n0 < (spec.or0_covariates.len() + 2).max(3)
}

/// Ratio at `theta_hat` on the resampled data, or `None` when fitting or
/// the dual solves fail.
fn replicate_ratio(
    boot: &ObservedSample,
    spec: &ModelSpec,
    method: SelMethod,
    theta_hat: f64,
    se_mu1: f64,
) -> Option<f64> {
    let nuisance: FittedNuisance = fit_nuisance(boot, spec).ok()?;
    let r = match method {
        SelMethod::Sel1 => Sel1::new(boot, &nuisance).ok()?.ratio(theta_hat, se_mu1),
        SelMethod::Sel2 => Sel2::new(boot, &nuisance).ok()?.ratio(theta_hat),
    };
    r.is_finite().then_some(r)
}

fn one_replicate(
    sample: &ObservedSample,
    spec: &ModelSpec,
    method: SelMethod,
    theta_hat: f64,
    se_mu1: f64,
    seed: u64,
    b: usize,
) -> Option<f64> {
    let mut rng = replicate_rng(seed, b);
    let n = sample.n();
    let mut rows = vec![0; n];
    for _ in 0..=MAX_REDRAWS {
        rows.iter_mut().for_each(|r| *r = rng.random_range(0..n));
        if !degenerate(sample, &rows, spec) {
            let boot = sample.resample(&rows).ok()?;
            return replicate_ratio(&boot, spec, method, theta_hat, se_mu1);
        }
    }
    None
}

fn collect_run(results: Vec<Option<f64>>, seed: u64) -> Result<BootstrapRun> {
    let b = results.len();
    let mut ratios: Vec<f64> = results.into_iter().flatten().collect();
    let n_failed = b - ratios.len();
    if n_failed as f64 > MAX_FAILED_FRACTION * b as f64 {
        return Err(Error::TooManyFailures {
            failed: n_failed,
            total: b,
        });
    }
    ratios.sort_by(f64::total_cmp);
    Ok(BootstrapRun {
        b,
        ratios,
        n_failed,
        seed,
    })
}

/// Ratios `r^[b](theta_hat)` over `b` resamples drawn with replacement, with
/// both working models refitted and all calibration targets recomputed on
/// each resample.
///
/// Replicates run in parallel; each uses its own random stream derived from
/// `(seed, b)`, so the result does not depend on scheduling.
pub fn bootstrap_ratios(
    sample: &ObservedSample,
    spec: &ModelSpec,
    method: SelMethod,
    theta_hat: f64,
    b: usize,
    seed: u64,
) -> Result<BootstrapRun> {
    if b < MIN_REPLICATES {
        return Err(Error::InvalidArgument(format!(
            "need at least {MIN_REPLICATES} bootstrap replicates, got {b}"
        )));
    }
    if !theta_hat.is_finite() {
        return Err(Error::InvalidArgument("estimate must be finite".into()));
    }
    // The SEL1 profile search window is scaled by the original-sample SE.
    let se_mu1 = match method {
        SelMethod::Sel1 => {
            let nuisance = fit_nuisance(sample, spec)?;
            Sel1::new(sample, &nuisance)?
                .variance()
                .map(|v| v.se_mu1())
                .unwrap_or(f64::NAN)
        }
        SelMethod::Sel2 => f64::NAN,
    };
    let results = (0..b)
        .into_par_iter()
        .map(|k| one_replicate(sample, spec, method, theta_hat, se_mu1, seed, k))
        .collect();
    collect_run(results, seed)
}

/// Lower `alpha` quantile of the retained ratios: the order statistic at
/// 1-based position `ceil(alpha * len)`.
pub fn bootstrap_quantile(run: &BootstrapRun, alpha: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "alpha must lie in (0, 1), got {alpha}"
        )));
    }
    let len = run.ratios.len();
    if len == 0 {
        return Err(Error::TooManyFailures {
            failed: run.n_failed,
            total: run.b,
        });
    }
    let k = ((alpha * len as f64).ceil() as usize).clamp(1, len);
    Ok(run.ratios[k - 1])
}

/// `{theta : r(theta) > b_alpha}` where `r` is the ratio function of the
/// original-sample fit.
pub fn bootstrap_ci(
    fit: &impl RatioInterval,
    variance: &VarianceSummary,
    run: &BootstrapRun,
    alpha: f64,
) -> Result<Interval> {
    let level = bootstrap_quantile(run, alpha)?;
    fit.ci_at_level(variance, level)
}
