//! Monte Carlo study: data-generating process, scenario cells, summary
//! metrics and power curves.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use nalgebra::DMatrix;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Exp1, StandardNormal};
use rayon::prelude::*;

use crate::baselines::{aipw, hajek_ipw, ipw, naive_diff};
use crate::bootstrap::{bootstrap_ci, bootstrap_ratios, SelMethod};
use crate::data::{ObservedSample, PotentialSample};
use crate::error::{Arm, Error, Result};
use crate::intervals::{chisq1_cdf, Interval, RatioInterval};
use crate::models::{fit_nuisance, FittedNuisance, ModelSpec};
use crate::sel1::Sel1;
use crate::sel2::Sel2;

/// Average treatment effect implied by the main-study outcome models.
pub const THETA_MAIN: f64 = 2.88;
/// Size of the fixed covariate population used for calibration.
pub const POPULATION_SIZE: usize = 1_000_000;
/// Seed of the calibration population.
pub const POPULATION_SEED: u64 = 20_240_601;
/// Width at which the intercept bisection stops.
pub(crate) const ALPHA0_TOL: f64 = 1e-10;

const PS_COEF: [f64; 3] = [0.2, 0.2, -0.5];
const LP1: [f64; 3] = [1.0, -2.0, 3.0];
const LP0: [f64; 3] = [1.0, 1.0, 2.0];

/// Which working models omit the third covariate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub enum Scenario {
    /// Both working models correct.
    TT,
    /// Outcome models omit `x3`.
    TF,
    /// Propensity model omits `x3`.
    FT,
}

impl Scenario {
    pub const ALL: [Scenario; 3] = [Scenario::TT, Scenario::TF, Scenario::FT];

    pub fn model_spec(self) -> ModelSpec {
        let full = vec![0, 1, 2];
        let short = vec![0, 1];
        match self {
            Scenario::TT => ModelSpec::new(full.clone(), full),
            Scenario::TF => ModelSpec::new(full, short),
            Scenario::FT => ModelSpec::new(short, full),
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scenario::TT => "TT",
            Scenario::TF => "TF",
            Scenario::FT => "FT",
        })
    }
}

impl FromStr for Scenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "TT" => Ok(Scenario::TT),
            "TF" => Ok(Scenario::TF),
            "FT" => Ok(Scenario::FT),
            _ => Err(Error::InvalidArgument(format!(
                "unknown scenario `{s}` (expected TT, TF or FT)"
            ))),
        }
    }
}

/// Outcome mean functions.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub enum OutcomeDesign {
    /// Intercepts 4.5 and 1; the true effect is 2.88.
    Main,
    /// Intercepts `theta + 4.5` and 3.88; the true effect is `theta`.
    Power(f64),
}

impl OutcomeDesign {
    pub fn theta_true(self) -> f64 {
        match self {
            OutcomeDesign::Main => THETA_MAIN,
            OutcomeDesign::Power(theta) => theta,
        }
    }

    fn intercepts(self) -> (f64, f64) {
        match self {
            OutcomeDesign::Main => (4.5, 1.0),
            OutcomeDesign::Power(theta) => (theta + 4.5, 3.88),
        }
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ScenarioConfig {
    pub n: usize,
    /// Expected treated proportion.
    pub t: f64,
    /// Correlation between each linear predictor and its potential outcome.
    pub rho: f64,
    pub scenario: Scenario,
    pub design: OutcomeDesign,
    pub n_sim: usize,
    pub seed: u64,
}

impl ScenarioConfig {
    pub fn new(n: usize, t: f64, rho: f64, scenario: Scenario, n_sim: usize, seed: u64) -> Self {
        Self {
            n,
            t,
            rho,
            scenario,
            design: OutcomeDesign::Main,
            n_sim,
            seed,
        }
    }

    pub fn theta_true(&self) -> f64 {
        self.design.theta_true()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.t > 0.0 && self.t < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "t must lie in (0, 1), got {}",
                self.t
            )));
        }
        if !(self.rho > 0.0 && self.rho < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "rho must lie in (0, 1), got {}",
                self.rho
            )));
        }
        if self.n_sim == 0 {
            return Err(Error::InvalidArgument("n_sim must be positive".into()));
        }
        if self.n < 20 {
            return Err(Error::InvalidArgument(format!(
                "n = {} is too small",
                self.n
            )));
        }
        Ok(())
    }
}

/// Draw `(x1, x2, x3)` with `x1 ~ N(0,1)`, `x2 = Bern(0.6) + 0.2 x1`,
/// `x3 = Exp(1) + 0.3 (x1 + x2)`.
fn draw_covariates(rng: &mut impl Rng) -> [f64; 3] {
    let x1: f64 = rng.sample(StandardNormal);
    let x2 = f64::from(u8::from(rng.random_bool(0.6))) + 0.2 * x1;
    let v3: f64 = rng.sample(Exp1);
    [x1, x2, v3 + 0.3 * (x1 + x2)]
}

fn dot(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn expit(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Fixed covariate population shared by all calibrations.
pub struct Population {
    x: Vec<[f64; 3]>,
    seed: u64,
}

impl Population {
    pub fn new(size: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self {
            x: (0..size).map(|_| draw_covariates(&mut rng)).collect(),
            seed,
        }
    }

    pub fn standard() -> Self {
        Self::new(POPULATION_SIZE, POPULATION_SEED)
    }

    fn mean_score(&self, alpha0: f64) -> f64 {
        self.x
            .iter()
            .map(|x| expit(alpha0 + dot(&PS_COEF, x)))
            .sum::<f64>()
            / self.x.len() as f64
    }

    /// Intercept for which the mean true propensity score equals `t`.
    pub fn alpha0(&self, t: f64) -> Result<f64> {
        if !(t > 0.0 && t < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "t must lie in (0, 1), got {t}"
            )));
        }
        let (mut lo, mut hi) = (-20.0, 20.0);
        while hi - lo > ALPHA0_TOL {
            let mid = 0.5 * (lo + hi);
            if self.mean_score(mid) < t {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Ok(0.5 * (lo + hi))
    }

    fn predictor_sd(&self, coef: &[f64; 3]) -> f64 {
        let m = self.x.len() as f64;
        let mean = self.x.iter().map(|x| dot(coef, x)).sum::<f64>() / m;
        (self
            .x
            .iter()
            .map(|x| (dot(coef, x) - mean).powi(2))
            .sum::<f64>()
            / m)
            .sqrt()
    }

    /// Noise scale giving correlation `rho` between the arm's linear
    /// predictor and its potential outcome.
    pub fn noise_scale(&self, rho: f64, arm: Arm) -> Result<f64> {
        if !(rho > 0.0 && rho < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "rho must lie in (0, 1), got {rho}"
            )));
        }
        let coef = match arm {
            Arm::Treated => &LP1,
            Arm::Control => &LP0,
        };
        Ok(self.predictor_sd(coef) * (1.0 / (rho * rho) - 1.0).sqrt())
    }
}

pub fn calibrate_alpha0(t: f64, seed: u64) -> Result<f64> {
    Population::new(POPULATION_SIZE, seed).alpha0(t)
}

pub fn calibrate_noise(rho: f64, arm: Arm, seed: u64) -> Result<f64> {
    Population::new(POPULATION_SIZE, seed).noise_scale(rho, arm)
}

/// Calibrated constants of one `(t, rho)` pair.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Calibration {
    pub t: f64,
    pub rho: f64,
    pub alpha0: f64,
    pub a1: f64,
    pub a0: f64,
    pub population_seed: u64,
}

impl Calibration {
    pub fn compute(population: &Population, t: f64, rho: f64) -> Result<Self> {
        Ok(Self {
            t,
            rho,
            alpha0: population.alpha0(t)?,
            a1: population.noise_scale(rho, Arm::Treated)?,
            a0: population.noise_scale(rho, Arm::Control)?,
            population_seed: population.seed,
        })
    }

    fn check(&self, config: &ScenarioConfig) -> Result<()> {
        if self.t != config.t || self.rho != config.rho {
            return Err(Error::InvalidArgument(format!(
                "calibration for (t, rho) = ({}, {}) used with ({}, {})",
                self.t, self.rho, config.t, config.rho
            )));
        }
        Ok(())
    }
}

fn replicate_rng(seed: u64, replicate: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(replicate as u64);
    rng
}

/// Draws one sample; fails only if an arm comes out empty.
fn draw_sample(
    config: &ScenarioConfig,
    calib: &Calibration,
    rng: &mut impl Rng,
) -> Result<(ObservedSample, PotentialSample)> {
    let n = config.n;
    let (c1, c0) = config.design.intercepts();
    let mut x = DMatrix::zeros(n, 3);
    let (mut t, mut y) = (Vec::with_capacity(n), Vec::with_capacity(n));
    let (mut y1, mut y0, mut tau0) = (
        Vec::with_capacity(n),
        Vec::with_capacity(n),
        Vec::with_capacity(n),
    );
    for j in 0..n {
        let xj = draw_covariates(rng);
        let eps: f64 = rng.sample(StandardNormal);
        let tau = expit(calib.alpha0 + dot(&PS_COEF, &xj));
        let treated = rng.random::<f64>() < tau;
        let a = c1 + dot(&LP1, &xj) + calib.a1 * eps;
        let b = c0 + dot(&LP0, &xj) + calib.a0 * eps;
        for k in 0..3 {
            x[(j, k)] = xj[k];
        }
        t.push(treated);
        y.push(if treated { a } else { b });
        y1.push(a);
        y0.push(b);
        tau0.push(tau);
    }
    let potential = PotentialSample { y1, y0, tau0 };
    Ok((ObservedSample::new(x, t, y)?, potential))
}

/// Replicate `replicate` of the cell, drawn from its own random stream.
pub fn generate_sample(
    config: &ScenarioConfig,
    calib: &Calibration,
    replicate: usize,
) -> Result<(ObservedSample, PotentialSample)> {
    config.validate()?;
    calib.check(config)?;
    draw_sample(config, calib, &mut replicate_rng(config.seed, replicate))
}

/// Estimators evaluated in a cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Sel1,
    Sel2,
    Aipw,
    Ipw,
    Hajek,
    Naive,
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method::Sel1,
        Method::Sel2,
        Method::Aipw,
        Method::Ipw,
        Method::Hajek,
        Method::Naive,
    ];

    pub fn sel(self) -> Option<SelMethod> {
        match self {
            Method::Sel1 => Some(SelMethod::Sel1),
            Method::Sel2 => Some(SelMethod::Sel2),
            _ => None,
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Sel1 => "sel1",
            Method::Sel2 => "sel2",
            Method::Aipw => "aipw",
            Method::Ipw => "ipw",
            Method::Hajek => "hajek",
            Method::Naive => "naive",
        })
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.to_string().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::InvalidArgument(format!("unknown method `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IntervalKind {
    Point,
    Chisq,
    Bootstrap,
}

impl fmt::Display for IntervalKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            IntervalKind::Point => "point",
            IntervalKind::Chisq => "chisq",
            IntervalKind::Bootstrap => "bootstrap",
        })
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SimOptions {
    pub methods: Vec<Method>,
    pub alpha: f64,
    /// Scaled chi-square intervals for the SEL methods.
    pub chisq: bool,
    /// Bootstrap replicates per sample; `None` skips bootstrap intervals.
    pub bootstrap: Option<usize>,
    /// Record `-2 r(theta_true) / delta` for the SEL methods.
    pub wilks: bool,
}

impl Default for SimOptions {
    fn default() -> Self {
        Self {
            methods: Method::ALL.to_vec(),
            alpha: 0.05,
            chisq: true,
            bootstrap: None,
            wilks: false,
        }
    }
}

impl SimOptions {
    pub fn points_only(methods: &[Method]) -> Self {
        Self {
            methods: methods.to_vec(),
            chisq: false,
            ..Self::default()
        }
    }

    fn validate(&self) -> Result<()> {
        if self.methods.is_empty() {
            return Err(Error::InvalidArgument("no methods selected".into()));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "alpha must lie in (0, 1), got {}",
                self.alpha
            )));
        }
        Ok(())
    }
}

/// What one method produced on one replicate; `None` marks a failure.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct MethodOutcome {
    pub method: Method,
    pub estimate: Option<f64>,
    pub chisq: Option<Interval>,
    pub bootstrap: Option<Interval>,
    /// `-2 r(theta_true) / delta`.
    pub wilks: Option<f64>,
}

impl MethodOutcome {
    fn failed(method: Method) -> Self {
        Self {
            method,
            estimate: None,
            chisq: None,
            bootstrap: None,
            wilks: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct ReplicateRecord {
    pub replicate: usize,
    pub outcomes: Vec<MethodOutcome>,
}

#[allow(clippy::too_many_arguments)]
fn sel_outcome<F: RatioInterval>(
    method: Method,
    fit: &F,
    ratio_at: impl Fn(&F, f64, f64) -> f64,
    sample: &ObservedSample,
    spec: &ModelSpec,
    theta_true: f64,
    options: &SimOptions,
    boot_seed: u64,
) -> MethodOutcome {
    let theta_hat = fit.theta_hat();
    let mut out = MethodOutcome {
        estimate: Some(theta_hat),
        ..MethodOutcome::failed(method)
    };
    let needs_variance = options.chisq || options.wilks || options.bootstrap.is_some();
    let Some(var) = needs_variance.then(|| fit.variance().ok()).flatten() else {
        return out;
    };
    if options.chisq {
        out.chisq = fit.ci_chisq(&var, options.alpha).ok();
    }
    if options.wilks {
        let r = ratio_at(fit, theta_true, var.se_mu1());
        out.wilks = r.is_finite().then(|| -2.0 * r / var.delta);
    }
    if let (Some(b), Some(sel)) = (options.bootstrap, method.sel()) {
        out.bootstrap = bootstrap_ratios(sample, spec, sel, theta_hat, b, boot_seed)
            .and_then(|run| bootstrap_ci(fit, &var, &run, options.alpha))
            .ok();
    }
    out
}

fn evaluate(
    sample: &ObservedSample,
    nuisance: &FittedNuisance,
    method: Method,
    theta_true: f64,
    options: &SimOptions,
    boot_seed: u64,
) -> MethodOutcome {
    let spec = &nuisance.spec;
    let point = |v: f64| MethodOutcome {
        estimate: v.is_finite().then_some(v),
        ..MethodOutcome::failed(method)
    };
    match method {
        Method::Sel1 => match Sel1::new(sample, nuisance) {
            Ok(fit) => sel_outcome(
                method,
                &fit,
                |f, t, se| f.ratio(t, se),
                sample,
                spec,
                theta_true,
                options,
                boot_seed,
            ),
            Err(_) => MethodOutcome::failed(method),
        },
        Method::Sel2 => match Sel2::new(sample, nuisance) {
            Ok(fit) => sel_outcome(
                method,
                &fit,
                |f, t, _| f.ratio(t),
                sample,
                spec,
                theta_true,
                options,
                boot_seed,
            ),
            Err(_) => MethodOutcome::failed(method),
        },
        Method::Aipw => point(aipw(sample, &nuisance.ps, &nuisance.or)),
        Method::Ipw => point(ipw(sample, &nuisance.ps)),
        Method::Hajek => point(hajek_ipw(sample, &nuisance.ps)),
        Method::Naive => point(naive_diff(sample, &nuisance.groups)),
    }
}

/// Generate replicate `replicate` and apply every selected method to it.
pub fn run_replicate(
    config: &ScenarioConfig,
    calib: &Calibration,
    options: &SimOptions,
    replicate: usize,
) -> ReplicateRecord {
    let mut rng = replicate_rng(config.seed, replicate);
    let drawn = draw_sample(config, calib, &mut rng);
    let boot_seed = rng.next_u64();
    let theta_true = config.theta_true();
    let fitted = drawn.and_then(|(sample, _)| {
        fit_nuisance(&sample, &config.scenario.model_spec()).map(|nu| (sample, nu))
    });
    let outcomes = match fitted {
        Ok((sample, nuisance)) => options
            .methods
            .iter()
            .map(|&m| evaluate(&sample, &nuisance, m, theta_true, options, boot_seed))
            .collect(),
        Err(_) => options
            .methods
            .iter()
            .map(|&m| MethodOutcome::failed(m))
            .collect(),
    };
    ReplicateRecord {
        replicate,
        outcomes,
    }
}

/// Summary of one `(estimator, interval type)` pair over a cell.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct CellResult {
    pub estimator: Method,
    pub interval_type: IntervalKind,
    /// `None` when the true effect is zero.
    pub rb_pct: Option<f64>,
    pub mse: Option<f64>,
    pub cp_pct: Option<f64>,
    pub al: Option<f64>,
    pub n_used: usize,
    pub n_dropped: usize,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct CellReport {
    pub config: ScenarioConfig,
    pub calibration: Calibration,
    pub results: Vec<CellResult>,
    pub records: Vec<ReplicateRecord>,
}

impl CellReport {
    pub fn result(&self, method: Method, kind: IntervalKind) -> Option<&CellResult> {
        self.results
            .iter()
            .find(|r| r.estimator == method && r.interval_type == kind)
    }

    /// Recorded `-2 r(theta_true) / delta` values of one method.
    pub fn wilks(&self, method: Method) -> Vec<f64> {
        self.records
            .iter()
            .flat_map(|r| &r.outcomes)
            .filter(|o| o.method == method)
            .filter_map(|o| o.wilks)
            .collect()
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn point_metrics(method: Method, estimates: &[Option<f64>], theta: f64) -> CellResult {
    let kept: Vec<f64> = estimates.iter().flatten().copied().collect();
    let n_dropped = estimates.len() - kept.len();
    let (rb, mse) = if kept.is_empty() {
        (None, None)
    } else {
        let m = mean(&kept);
        let rb = (theta != 0.0).then(|| 100.0 * (m - theta) / theta);
        (
            rb,
            Some(mean(
                &kept.iter().map(|e| (e - theta).powi(2)).collect::<Vec<_>>(),
            )),
        )
    };
    CellResult {
        estimator: method,
        interval_type: IntervalKind::Point,
        rb_pct: rb,
        mse,
        cp_pct: None,
        al: None,
        n_used: kept.len(),
        n_dropped,
    }
}

fn interval_metrics(
    method: Method,
    kind: IntervalKind,
    intervals: &[Option<Interval>],
    theta: f64,
) -> CellResult {
    let kept: Vec<&Interval> = intervals.iter().flatten().collect();
    let n_dropped = intervals.len() - kept.len();
    let (cp, al) = if kept.is_empty() {
        (None, None)
    } else {
        let covered = kept.iter().filter(|i| i.contains(theta)).count();
        (
            Some(100.0 * covered as f64 / kept.len() as f64),
            Some(kept.iter().map(|i| i.length()).sum::<f64>() / kept.len() as f64),
        )
    };
    CellResult {
        estimator: method,
        interval_type: kind,
        rb_pct: None,
        mse: None,
        cp_pct: cp,
        al,
        n_used: kept.len(),
        n_dropped,
    }
}

fn summarize_records(
    records: &[ReplicateRecord],
    options: &SimOptions,
    theta: f64,
) -> Vec<CellResult> {
    let mut results = Vec::new();
    for (k, &method) in options.methods.iter().enumerate() {
        let outcomes: Vec<&MethodOutcome> = records.iter().map(|r| &r.outcomes[k]).collect();
        let estimates: Vec<Option<f64>> = outcomes.iter().map(|o| o.estimate).collect();
        results.push(point_metrics(method, &estimates, theta));
        if method.sel().is_some() {
            if options.chisq {
                let iv: Vec<_> = outcomes.iter().map(|o| o.chisq).collect();
                results.push(interval_metrics(method, IntervalKind::Chisq, &iv, theta));
            }
            if options.bootstrap.is_some() {
                let iv: Vec<_> = outcomes.iter().map(|o| o.bootstrap).collect();
                results.push(interval_metrics(
                    method,
                    IntervalKind::Bootstrap,
                    &iv,
                    theta,
                ));
            }
        }
    }
    results
}

/// Run every replicate of a cell and summarize each method.
///
/// Replicates run in parallel on independent random streams and are
/// aggregated in replicate order, so the report depends only on
/// `(config, calibration, options)`.
pub fn run_cell(
    config: &ScenarioConfig,
    calib: &Calibration,
    options: &SimOptions,
) -> Result<CellReport> {
    config.validate()?;
    calib.check(config)?;
    options.validate()?;
    let records: Vec<ReplicateRecord> = (0..config.n_sim)
        .into_par_iter()
        .map(|r| run_replicate(config, calib, options, r))
        .collect();
    let results = summarize_records(&records, options, config.theta_true());
    Ok(CellReport {
        config: config.clone(),
        calibration: *calib,
        results,
        records,
    })
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct PowerRow {
    pub theta_true: f64,
    pub method: Method,
    pub interval_type: IntervalKind,
    /// Fraction of retained intervals excluding zero.
    pub rejection_rate: f64,
    pub n_used: usize,
    pub n_dropped: usize,
}

/// Rejection rates of `H0: theta = 0` over a grid of true effects under the
/// power-study outcome design.
pub fn power_curve(
    base: &ScenarioConfig,
    calib: &Calibration,
    grid: &[f64],
    options: &SimOptions,
) -> Result<Vec<PowerRow>> {
    if grid.is_empty() {
        return Err(Error::InvalidArgument("empty effect grid".into()));
    }
    if let Some(bad) = grid.iter().find(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "non-finite grid value {bad}"
        )));
    }
    let mut rows = Vec::new();
    for &theta in grid {
        let config = ScenarioConfig {
            design: OutcomeDesign::Power(theta),
            ..base.clone()
        };
        let report = run_cell(&config, calib, options)?;
        for (k, &method) in options.methods.iter().enumerate() {
            if method.sel().is_none() {
                continue;
            }
            let kinds = [
                (IntervalKind::Chisq, options.chisq),
                (IntervalKind::Bootstrap, options.bootstrap.is_some()),
            ];
            for (kind, on) in kinds {
                if !on {
                    continue;
                }
                let intervals: Vec<Interval> = report
                    .records
                    .iter()
                    .filter_map(|r| match kind {
                        IntervalKind::Chisq => r.outcomes[k].chisq,
                        _ => r.outcomes[k].bootstrap,
                    })
                    .collect();
                let rejected = intervals.iter().filter(|i| !i.contains(0.0)).count();
                rows.push(PowerRow {
                    theta_true: theta,
                    method,
                    interval_type: kind,
                    rejection_rate: if intervals.is_empty() {
                        f64::NAN
                    } else {
                        rejected as f64 / intervals.len() as f64
                    },
                    n_used: intervals.len(),
                    n_dropped: config.n_sim - intervals.len(),
                });
            }
        }
    }
    Ok(rows)
}

/// Kolmogorov-Smirnov distance between the empirical distribution of
/// `values` and the chi-square distribution with one degree of freedom.
pub fn ks_chisq1(values: &[f64]) -> f64 {
    let mut v: Vec<f64> = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() as f64;
    v.iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = chisq1_cdf(x.max(0.0));
            (f - i as f64 / m).max((i + 1) as f64 / m - f)
        })
        .fold(0.0, f64::max)
}

#[derive(Debug, serde::Serialize)]
struct CsvRow<'a> {
    n: usize,
    t: f64,
    rho: f64,
    scenario: &'a str,
    estimator: String,
    interval_type: String,
    rb_pct: Option<f64>,
    mse_x100: Option<f64>,
    cp_pct: Option<f64>,
    al_x100: Option<f64>,
    n_dropped: usize,
}

/// One CSV row per `(cell, estimator, interval type)`; MSE and length are
/// scaled by 100.
pub fn write_results_csv<W: Write>(writer: W, reports: &[CellReport]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for report in reports {
        let c = &report.config;
        let scenario = c.scenario.to_string();
        for r in &report.results {
            w.serialize(CsvRow {
                n: c.n,
                t: c.t,
                rho: c.rho,
                scenario: &scenario,
                estimator: r.estimator.to_string(),
                interval_type: r.interval_type.to_string(),
                rb_pct: r.rb_pct,
                mse_x100: r.mse.map(|v| 100.0 * v),
                cp_pct: r.cp_pct,
                al_x100: r.al.map(|v| 100.0 * v),
                n_dropped: r.n_dropped,
            })?;
        }
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, serde::Serialize)]
struct PowerCsvRow {
    theta_true: f64,
    method: String,
    rejection_rate: f64,
    n_dropped: usize,
}

pub fn write_power_csv<W: Write>(writer: W, rows: &[PowerRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for r in rows {
        w.serialize(PowerCsvRow {
            theta_true: r.theta_true,
            method: format!("{}_{}", r.method, r.interval_type),
            rejection_rate: r.rejection_rate,
            n_dropped: r.n_dropped,
        })?;
    }
    w.flush()?;
    Ok(())
}
