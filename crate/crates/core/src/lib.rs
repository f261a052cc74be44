//! Doubly robust estimation of the average treatment effect with sample
//! empirical likelihood.

// Comparisons like `!(x > 0.0)` are meant to be true for NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baselines;
pub mod bootstrap;
pub mod data;
pub mod el;
pub mod elvar;
pub mod error;
pub mod estimate;
pub mod intervals;
pub mod models;
mod optim;
pub mod sel1;
pub mod sel2;
pub mod simulation;

pub use baselines::{aipw, hajek_ipw, ipw, naive_diff};
pub use bootstrap::{bootstrap_ci, bootstrap_quantile, bootstrap_ratios, BootstrapRun, SelMethod};
pub use data::{
    load_sample, read_sample, split_groups, ColumnSchema, GroupIndex, ObservedSample,
    PotentialSample,
};
pub use el::{
    check_hull, log_el_at, solve_dual, solve_dual_from, ConstraintMatrix, ElSolution, ElStatus,
};
pub use elvar::VarianceSummary;
pub use error::{Arm, Error, Result};
pub use estimate::{estimate_ate, EstimateOptions, EstimateReport, MethodReport};
pub use intervals::{
    chisq1_cdf, chisq1_quantile, invert_ratio, scaled_chisq_level, Interval, RatioInterval,
};
pub use models::{
    fit_logistic_ps, fit_nuisance, fit_ols_outcomes, FittedNuisance, ModelSpec, OrFit, PsFit,
};
pub use sel1::{Sel1, Sel1Point};
pub use sel2::{PhiSolution, Sel2, Sel2Point};
pub use simulation::{
    power_curve, run_cell, write_power_csv, write_results_csv, Calibration, CellReport, CellResult,
    IntervalKind, Method, OutcomeDesign, Population, PowerRow, Scenario, ScenarioConfig,
    SimOptions,
};

/// Numerical tolerances and iteration limits of the solvers, recorded in
/// run manifests.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct Tolerances {
    pub el_gradient: f64,
    pub el_max_iter: usize,
    pub sel2_score: f64,
    pub sel2_max_iter: usize,
    pub sel1_profile: f64,
    pub sel1_profile_half_width_se: f64,
    pub ci_endpoint_se: f64,
    pub ci_initial_bracket_se: f64,
    pub ps_score: f64,
    pub ps_max_iter: usize,
    pub positivity_eps: f64,
    pub bootstrap_max_failed_fraction: f64,
    pub bootstrap_max_redraws: usize,
    pub alpha0_bisection: f64,
}

pub const TOLERANCES: Tolerances = Tolerances {
    el_gradient: el::GRAD_TOL,
    el_max_iter: el::MAX_ITER,
    sel2_score: sel2::PHI_TOL,
    sel2_max_iter: sel2::PHI_MAX_ITER,
    sel1_profile: sel1::PROFILE_TOL,
    sel1_profile_half_width_se: sel1::PROFILE_HALF_WIDTH_SE,
    ci_endpoint_se: intervals::ENDPOINT_TOL_SE,
    ci_initial_bracket_se: intervals::INITIAL_SE_MULTIPLE,
    ps_score: models::PS_SCORE_TOL,
    ps_max_iter: models::PS_MAX_ITER,
    positivity_eps: models::POSITIVITY_EPS,
    bootstrap_max_failed_fraction: bootstrap::MAX_FAILED_FRACTION,
    bootstrap_max_redraws: bootstrap::MAX_REDRAWS,
    alpha0_bisection: simulation::ALPHA0_TOL,
};
