//! One-shot estimation of the treatment effect on an observed sample with
//! every selected method.

use crate::baselines::{aipw, hajek_ipw, ipw, naive_diff};
use crate::bootstrap::{bootstrap_ci, bootstrap_ratios};
use crate::data::ObservedSample;
use crate::error::{Error, Result};
use crate::intervals::{Interval, RatioInterval};
use crate::models::{fit_nuisance, FittedNuisance, ModelSpec};
use crate::sel1::Sel1;
use crate::sel2::Sel2;
use crate::simulation::Method;

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct EstimateOptions {
    pub methods: Vec<Method>,
    pub alpha: f64,
    /// Bootstrap replicates for the SEL methods; `None` skips them.
    pub bootstrap: Option<usize>,
    pub seed: u64,
}

impl Default for EstimateOptions {
    fn default() -> Self {
        Self {
            methods: Method::ALL.to_vec(),
            alpha: 0.05,
            bootstrap: None,
            seed: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct MethodReport {
    pub method: Method,
    pub theta_hat: Option<f64>,
    pub mu1_hat: Option<f64>,
    pub mu0_hat: Option<f64>,
    /// Standard error of the estimate, SEL methods only.
    pub se: Option<f64>,
    /// Scaling constant of the ratio statistic.
    pub delta: Option<f64>,
    pub ci_chisq: Option<Interval>,
    pub ci_bootstrap: Option<Interval>,
    pub bootstrap_failed: Option<usize>,
    /// First failure met while fitting or building intervals.
    pub error: Option<String>,
    pub hull_failure: bool,
}

impl MethodReport {
    fn empty(method: Method) -> Self {
        Self {
            method,
            theta_hat: None,
            mu1_hat: None,
            mu0_hat: None,
            se: None,
            delta: None,
            ci_chisq: None,
            ci_bootstrap: None,
            bootstrap_failed: None,
            error: None,
            hull_failure: false,
        }
    }

    fn fail(mut self, e: &Error) -> Self {
        self.hull_failure |= matches!(e, Error::HullViolation(_));
        self.error.get_or_insert_with(|| e.to_string());
        self
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct EstimateReport {
    pub n: usize,
    pub n_treated: usize,
    pub n_control: usize,
    pub alpha: f64,
    pub covariates: Vec<String>,
    /// Units whose fitted propensity score is numerically 0 or 1.
    pub positivity_violations: usize,
    pub ps_iterations: usize,
    pub methods: Vec<MethodReport>,
}

impl EstimateReport {
    pub fn method(&self, method: Method) -> Option<&MethodReport> {
        self.methods.iter().find(|m| m.method == method)
    }

    /// True when no selected method produced an estimate.
    pub fn all_failed(&self) -> bool {
        self.methods.iter().all(|m| m.theta_hat.is_none())
    }
}

fn sel_report<F: RatioInterval>(
    method: Method,
    fit: &F,
    mu: (f64, f64),
    sample: &ObservedSample,
    spec: &ModelSpec,
    options: &EstimateOptions,
) -> MethodReport {
    let theta_hat = fit.theta_hat();
    let mut out = MethodReport {
        theta_hat: Some(theta_hat),
        mu1_hat: Some(mu.0),
        mu0_hat: Some(mu.1),
        ..MethodReport::empty(method)
    };
    let var = match fit.variance() {
        Ok(v) => v,
        Err(e) => return out.fail(&e),
    };
    out.se = Some(var.se_theta());
    out.delta = Some(var.delta);
    match fit.ci_chisq(&var, options.alpha) {
        Ok(ci) => out.ci_chisq = Some(ci),
        Err(e) => out = out.fail(&e),
    }
    if let (Some(b), Some(sel)) = (options.bootstrap, method.sel()) {
        let run = bootstrap_ratios(sample, spec, sel, theta_hat, b, options.seed);
        if let Ok(run) = &run {
            out.bootstrap_failed = Some(run.n_failed);
        }
        match run.and_then(|run| bootstrap_ci(fit, &var, &run, options.alpha)) {
            Ok(ci) => out.ci_bootstrap = Some(ci),
            Err(e) => out = out.fail(&e),
        }
    }
    out
}

fn method_report(
    sample: &ObservedSample,
    nuisance: &FittedNuisance,
    method: Method,
    options: &EstimateOptions,
) -> MethodReport {
    let spec = &nuisance.spec;
    let point = |v: f64| {
        let out = MethodReport::empty(method);
        if v.is_finite() {
            MethodReport {
                theta_hat: Some(v),
                ..out
            }
        } else {
            MethodReport {
                error: Some("estimate is not finite".into()),
                ..out
            }
        }
    };
    match method {
        Method::Sel1 => match Sel1::new(sample, nuisance) {
            Ok(fit) => {
                let p = fit.point();
                sel_report(method, &fit, (p.mu1_hat, p.mu0_hat), sample, spec, options)
            }
            Err(e) => MethodReport::empty(method).fail(&e),
        },
        Method::Sel2 => match Sel2::new(sample, nuisance) {
            Ok(fit) => {
                let p = fit.point();
                sel_report(method, &fit, (p.mu1_hat, p.mu0_hat), sample, spec, options)
            }
            Err(e) => MethodReport::empty(method).fail(&e),
        },
        Method::Aipw => point(aipw(sample, &nuisance.ps, &nuisance.or)),
        Method::Ipw => point(ipw(sample, &nuisance.ps)),
        Method::Hajek => point(hajek_ipw(sample, &nuisance.ps)),
        Method::Naive => point(naive_diff(sample, &nuisance.groups)),
    }
}

/// Fit the working models given by `spec` and apply each selected method.
///
/// Only the selected methods are computed. Failures of individual methods
/// are reported per method; an error is returned only when the inputs are
/// invalid or the working models cannot be fitted.
pub fn estimate_ate(
    sample: &ObservedSample,
    spec: &ModelSpec,
    options: &EstimateOptions,
) -> Result<EstimateReport> {
    if options.methods.is_empty() {
        return Err(Error::InvalidArgument("no methods selected".into()));
    }
    if !(options.alpha > 0.0 && options.alpha < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "alpha must lie in (0, 1), got {}",
            options.alpha
        )));
    }
    let nuisance = fit_nuisance(sample, spec)?;
    let methods = options
        .methods
        .iter()
        .map(|&m| method_report(sample, &nuisance, m, options))
        .collect();
    Ok(EstimateReport {
        n: sample.n(),
        n_treated: nuisance.groups.n1(),
        n_control: nuisance.groups.n0(),
        alpha: options.alpha,
        covariates: sample.covariate_names().to_vec(),
        positivity_violations: nuisance.ps.positivity_violations,
        ps_iterations: nuisance.ps.iterations,
        methods,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sel1::tests::toy_sample;

    #[test]
    fn only_selected_methods_are_reported() {
        let s = toy_sample(120, 3);
        let opts = EstimateOptions {
            methods: vec![Method::Sel1, Method::Naive],
            ..Default::default()
        };
        let rep = estimate_ate(&s, &ModelSpec::full(2), &opts).unwrap();
        assert_eq!(rep.methods.len(), 2);
        assert!(rep.method(Method::Sel2).is_none());
        let sel1 = rep.method(Method::Sel1).unwrap();
        let ci = sel1.ci_chisq.unwrap();
        assert!(ci.contains(sel1.theta_hat.unwrap()));
        assert!(sel1.se.unwrap() > 0.0 && sel1.delta.unwrap() > 0.0);
        assert_eq!(rep.n_treated + rep.n_control, 120);
    }

    #[test]
    fn matches_direct_library_calls() {
        let s = toy_sample(150, 4);
        let spec = ModelSpec::full(2);
        let rep = estimate_ate(&s, &spec, &EstimateOptions::default()).unwrap();
        let nu = fit_nuisance(&s, &spec).unwrap();
        let fit = Sel2::new(&s, &nu).unwrap();
        assert_eq!(
            rep.method(Method::Sel2).unwrap().theta_hat,
            Some(fit.point().theta_hat)
        );
        assert_eq!(
            rep.method(Method::Aipw).unwrap().theta_hat,
            Some(aipw(&s, &nu.ps, &nu.or))
        );
        assert!(!rep.all_failed());
    }

    #[test]
    fn bootstrap_interval_is_reported() {
        let s = toy_sample(80, 5);
        let opts = EstimateOptions {
            methods: vec![Method::Sel2],
            bootstrap: Some(100),
            ..Default::default()
        };
        let rep = estimate_ate(&s, &ModelSpec::full(2), &opts).unwrap();
        let m = rep.method(Method::Sel2).unwrap();
        assert!(m.ci_bootstrap.is_some());
        assert!(m.bootstrap_failed.unwrap() <= 20);
    }

    #[test]
    fn invalid_options_rejected() {
        let s = toy_sample(60, 6);
        let bad_alpha = EstimateOptions {
            alpha: 1.5,
            ..Default::default()
        };
        assert!(estimate_ate(&s, &ModelSpec::full(2), &bad_alpha).is_err());
        let none = EstimateOptions {
            methods: vec![],
            ..Default::default()
        };
        assert!(estimate_ate(&s, &ModelSpec::full(2), &none).is_err());
    }
}
