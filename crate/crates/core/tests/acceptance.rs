//! Acceptance suite: one pass/fail line per criterion.
//!
//! Runs as a plain binary (`harness = false`) so every line is printed.

mod common;

use std::time::Instant;

use nalgebra::DVector;
use selate::simulation::{
    generate_sample, ks_chisq1, power_curve, run_cell, write_results_csv, CellReport, IntervalKind,
    Method, Scenario, ScenarioConfig, SimOptions,
};
use selate::{
    aipw, fit_nuisance, hajek_ipw, ipw, naive_diff, solve_dual, split_groups, ConstraintMatrix,
    ObservedSample, PsFit, RatioInterval, Sel1, Sel2,
};

const SEED: u64 = 1;
const CHI2_95: f64 = 3.841_458_820_694_124;

struct Verdict {
    id: usize,
    pass: bool,
    detail: String,
}

fn report(id: usize, title: &str, checks: Vec<(bool, String)>, started: Instant) -> Verdict {
    let pass = checks.iter().all(|(ok, _)| *ok);
    let detail = checks
        .into_iter()
        .map(|(ok, s)| format!("{}{s}", if ok { "" } else { "FAILED " }))
        .collect::<Vec<_>>()
        .join("; ");
    let line = format!(
        "criterion {id} {}: {title}: {detail} ({:.1} s)",
        if pass { "PASS" } else { "FAIL" },
        started.elapsed().as_secs_f64()
    );
    println!("{line}");
    Verdict { id, pass, detail }
}

fn cell(
    n: usize,
    t: f64,
    rho: f64,
    scenario: Scenario,
    n_sim: usize,
    options: &SimOptions,
) -> CellReport {
    let config = ScenarioConfig::new(n, t, rho, scenario, n_sim, SEED);
    run_cell(&config, &common::calibration(t, rho), options).expect("cell runs")
}

fn within(v: f64, lo: f64, hi: f64) -> bool {
    v >= lo && v <= hi
}

fn rb(r: &CellReport, m: Method) -> f64 {
    r.result(m, IntervalKind::Point)
        .and_then(|c| c.rb_pct)
        .unwrap_or(f64::NAN)
}

fn criterion_1() -> Verdict {
    let start = Instant::now();
    let r = cell(
        400,
        0.3,
        0.7,
        Scenario::TT,
        1000,
        &SimOptions::points_only(&[Method::Sel1, Method::Sel2]),
    );
    let mse = 100.0
        * r.result(Method::Sel1, IntervalKind::Point)
            .and_then(|c| c.mse)
            .unwrap_or(f64::NAN);
    let (rb1, rb2) = (rb(&r, Method::Sel1), rb(&r, Method::Sel2));
    report(
        1,
        "point estimates at (400, 0.3, 0.7) TT",
        vec![
            (
                within(rb1, -2.5, 1.5),
                format!("SEL1 %RB {rb1:.2} in [-2.5, 1.5]"),
            ),
            (
                within(mse, 0.75 * 16.7, 1.25 * 16.7),
                format!("SEL1 MSEx100 {mse:.2} within 25% of 16.7"),
            ),
            (
                within(rb2, -2.5, 1.5),
                format!("SEL2 %RB {rb2:.2} in [-2.5, 1.5]"),
            ),
        ],
        start,
    )
}

fn criterion_2() -> Verdict {
    let start = Instant::now();
    let methods = [Method::Sel1, Method::Sel2, Method::Aipw, Method::Naive];
    let mut checks = Vec::new();
    for scenario in [Scenario::TF, Scenario::FT] {
        let r = cell(
            400,
            0.5,
            0.5,
            scenario,
            1000,
            &SimOptions::points_only(&methods),
        );
        for m in [Method::Sel1, Method::Sel2, Method::Aipw] {
            let v = rb(&r, m);
            checks.push((
                v.abs() < 5.0,
                format!("{scenario} {m} |%RB| {:.2} < 5", v.abs()),
            ));
        }
        let v = rb(&r, Method::Naive);
        checks.push((
            v.abs() > 10.0,
            format!("{scenario} naive |%RB| {:.2} > 10", v.abs()),
        ));
    }
    report(2, "double robustness at (400, 0.5, 0.5)", checks, start)
}

fn criterion_3() -> Verdict {
    let start = Instant::now();
    let options = SimOptions {
        methods: vec![Method::Sel1, Method::Sel2],
        ..SimOptions::default()
    };
    let r = cell(400, 0.3, 0.5, Scenario::TT, 1000, &options);
    let get = |m| r.result(m, IntervalKind::Chisq).expect("interval row");
    let (c1, c2) = (get(Method::Sel1), get(Method::Sel2));
    let (cp1, cp2) = (c1.cp_pct.unwrap_or(f64::NAN), c2.cp_pct.unwrap_or(f64::NAN));
    let (al1, al2) = (
        100.0 * c1.al.unwrap_or(f64::NAN),
        100.0 * c2.al.unwrap_or(f64::NAN),
    );
    report(
        3,
        "chi-square interval coverage at (400, 0.3, 0.5) TT",
        vec![
            (
                within(cp1, 92.7, 96.7),
                format!("SELR1 CP {cp1:.1} in [92.7, 96.7]"),
            ),
            (
                within(cp2, 93.2, 97.2),
                format!("SELR2 CP {cp2:.1} in [93.2, 97.2]"),
            ),
            (
                within(al1, 0.9 * 274.6, 1.1 * 274.6),
                format!("SELR1 ALx100 {al1:.1} within 10% of 274.6"),
            ),
            (
                within(al2, 0.9 * 274.2, 1.1 * 274.2),
                format!("SELR2 ALx100 {al2:.1} within 10% of 274.2"),
            ),
        ],
        start,
    )
}

fn criterion_4() -> Verdict {
    let start = Instant::now();
    let options = SimOptions {
        methods: vec![Method::Sel1, Method::Sel2],
        chisq: false,
        wilks: true,
        ..SimOptions::default()
    };
    let r = cell(400, 0.5, 0.5, Scenario::TT, 1000, &options);
    let checks = [Method::Sel1, Method::Sel2]
        .into_iter()
        .map(|m| {
            let w = r.wilks(m);
            let ks = ks_chisq1(&w);
            (
                ks < 0.06,
                format!("{m} KS {ks:.4} < 0.06 over {} replicates", w.len()),
            )
        })
        .collect();
    report(
        4,
        "scaled chi-square calibration at (400, 0.5, 0.5) TT",
        checks,
        start,
    )
}

fn criterion_5() -> Verdict {
    let start = Instant::now();
    let options = SimOptions {
        methods: vec![Method::Sel1],
        bootstrap: Some(500),
        ..SimOptions::default()
    };
    let r = cell(100, 0.3, 0.3, Scenario::TT, 500, &options);
    let cp = |k| {
        r.result(Method::Sel1, k)
            .and_then(|c| c.cp_pct)
            .unwrap_or(f64::NAN)
    };
    let (chi, boot) = (cp(IntervalKind::Chisq), cp(IntervalKind::Bootstrap));
    report(
        5,
        "bootstrap calibration at (100, 0.3, 0.3) TT, B = 500",
        vec![
            (
                boot >= chi,
                format!("SELR1B CP {boot:.1} >= SELR1 CP {chi:.1}"),
            ),
            (
                within(boot, 95.0, 99.0),
                format!("SELR1B CP {boot:.1} in [95, 99]"),
            ),
        ],
        start,
    )
}

fn criterion_6() -> Verdict {
    let start = Instant::now();
    let config = ScenarioConfig::new(400, 0.5, 0.5, Scenario::TT, 1000, SEED);
    let options = SimOptions {
        methods: vec![Method::Sel1, Method::Sel2],
        ..SimOptions::default()
    };
    let rows = power_curve(
        &config,
        &common::calibration(0.5, 0.5),
        &[0.0, 3.0],
        &options,
    )
    .expect("power runs");
    let checks = rows
        .iter()
        .map(|row| {
            if row.theta_true == 0.0 {
                (
                    within(row.rejection_rate, 0.03, 0.07),
                    format!(
                        "{} size {:.3} in [0.03, 0.07]",
                        row.method, row.rejection_rate
                    ),
                )
            } else {
                (
                    row.rejection_rate > 0.95,
                    format!("{} power at 3 {:.3} > 0.95", row.method, row.rejection_rate),
                )
            }
        })
        .collect();
    report(
        6,
        "size and power at n = 400 TT (t = 0.5, rho = 0.5)",
        checks,
        start,
    )
}

/// Small datasets from the study design, varied in size and scenario.
fn property_datasets() -> Vec<(ObservedSample, selate::ModelSpec)> {
    (0..50)
        .map(|k| {
            let n = [60, 90, 150][k % 3];
            let (t, rho) = [(0.3, 0.5), (0.5, 0.3), (0.7, 0.7)][(k / 3) % 3];
            let scenario = Scenario::ALL[(k / 9) % 3];
            let config = ScenarioConfig::new(n, t, rho, scenario, 1, 1000 + k as u64);
            let (s, _) = generate_sample(&config, &common::calibration(t, rho), 0).expect("sample");
            (s, scenario.model_spec())
        })
        .collect()
}

fn criterion_7() -> Verdict {
    let start = Instant::now();
    let mut checks = Vec::new();

    // Dual solver against the primal oracle.
    let (mut compared, mut worst, mut hull_agree, mut worst_resid) = (0, 0.0_f64, true, 0.0_f64);
    for rows in common::small_instances(300, 77) {
        let g = ConstraintMatrix::from_rows(&rows).unwrap();
        let sol = solve_dual(&g);
        match (sol.converged(), common::primal_weights(&rows)) {
            (true, Some(p)) => {
                compared += 1;
                worst = p
                    .iter()
                    .zip(&sol.weights)
                    .map(|(a, b)| (a - b).abs())
                    .fold(worst, f64::max);
            }
            (false, None) => {}
            _ => hull_agree = false,
        }
        if sol.converged() {
            worst_resid = worst_resid.max((sol.weights.iter().sum::<f64>() - 1.0).abs());
            for k in 0..g.ncols() {
                let c: f64 = sol
                    .weights
                    .iter()
                    .zip(g.rows())
                    .map(|(w, r)| w * r[k])
                    .sum();
                worst_resid = worst_resid.max(c.abs());
            }
        }
    }
    checks.push((
        worst < 1e-4 && compared > 100,
        format!("dual vs primal weights max diff {worst:.1e} over {compared} instances"),
    ));
    checks.push((
        hull_agree,
        "hull verdicts agree with the oracle".to_string(),
    ));

    let data = property_datasets();
    let (mut worst_zero, mut max_ratio, mut worst_rank, mut worst_equiv, mut worst_stat) =
        (0.0_f64, f64::NEG_INFINITY, 0.0_f64, 0.0_f64, 0.0_f64);
    let mut fitted = 0;
    for (k, (s, spec)) in data.iter().enumerate() {
        let Ok(nu) = fit_nuisance(s, spec) else {
            continue;
        };
        let (Ok(f1), Ok(f2)) = (Sel1::new(s, &nu), Sel2::new(s, &nu)) else {
            continue;
        };
        let (Ok(v1), Ok(v2)) = (f1.variance(), f2.variance()) else {
            continue;
        };
        fitted += 1;
        // Calibration constraints of the point-estimate weights.
        let (ps, or) = (&nu.ps, &nu.or);
        let tau_bar = ps.mean_tau();
        let (s1, s0) = (&nu.groups.s1, &nu.groups.s0);
        let wsum = |w: &[f64], idx: &[usize], f: &dyn Fn(usize) -> f64| {
            w.iter().zip(idx).map(|(w, &j)| w * f(j)).sum::<f64>()
        };
        let (p1, p0) = (&f1.point().weights_p1, &f1.point().weights_p0);
        let (q1, q0) = (&f2.point().weights_p1, &f2.point().weights_p0);
        let residuals = [
            wsum(p1, s1, &|_| 1.0) - 1.0,
            wsum(p0, s0, &|_| 1.0) - 1.0,
            wsum(p1, s1, &|j| ps.tau_hat[j]) - tau_bar,
            wsum(p0, s0, &|j| 1.0 - ps.tau_hat[j]) - (1.0 - tau_bar),
            wsum(p1, s1, &|j| or.m1_hat[j]) - or.mbar1,
            wsum(p0, s0, &|j| or.m0_hat[j]) - or.mbar0,
            wsum(q1, s1, &|_| 1.0) - 1.0,
            wsum(q0, s0, &|_| 1.0) - 1.0,
            wsum(q1, s1, &|j| (or.m1_hat[j] - or.mbar1) / ps.tau_hat[j]),
            wsum(q0, s0, &|j| {
                (or.m0_hat[j] - or.mbar0) / (1.0 - ps.tau_hat[j])
            }),
        ];
        worst_resid = residuals.iter().fold(worst_resid, |a, r| a.max(r.abs()));

        let (t1, t2) = (f1.theta_hat(), f2.theta_hat());
        worst_zero = worst_zero
            .max(f1.ratio(t1, v1.se_mu1()).abs())
            .max(f2.ratio(t2).abs());
        for step in [-2.0, -0.5, 0.5, 2.0] {
            max_ratio = max_ratio.max(f1.ratio(t1 + step * v1.se_theta(), v1.se_mu1()));
            max_ratio = max_ratio.max(f2.ratio(t2 + step * v2.se_theta()));
        }
        worst_rank = worst_rank.max(v1.rank_one_ratio()).max(v2.rank_one_ratio());

        // Location equivariance of every estimator except the unnormalized IPW.
        let c = 7.25;
        let shifted = ObservedSample::new(
            s.x().clone(),
            s.t().to_vec(),
            s.y().iter().map(|y| y + c).collect(),
        )
        .unwrap();
        let nu_s = fit_nuisance(&shifted, spec).unwrap();
        let pairs = [
            (t1, Sel1::new(&shifted, &nu_s).unwrap().theta_hat()),
            (t2, Sel2::new(&shifted, &nu_s).unwrap().theta_hat()),
            (aipw(s, &nu.ps, &nu.or), aipw(&shifted, &nu_s.ps, &nu_s.or)),
            (hajek_ipw(s, &nu.ps), hajek_ipw(&shifted, &nu_s.ps)),
            (
                naive_diff(s, &nu.groups),
                naive_diff(&shifted, &nu_s.groups),
            ),
        ];
        for (a, b) in pairs {
            worst_equiv = worst_equiv.max((a - b).abs());
        }

        // Chi-square interval endpoints on a subset (each needs a full inversion).
        if k % 5 == 0 {
            let stat1 = |th: f64| -2.0 * f1.ratio(th, v1.se_mu1()) / v1.delta;
            let stat2 = |th: f64| -2.0 * f2.ratio(th) / v2.delta;
            let ci1 = f1.ci_chisq(&v1, 0.05).expect("SEL1 interval");
            let ci2 = f2.ci_chisq(&v2, 0.05).expect("SEL2 interval");
            for v in [
                stat1(ci1.lower),
                stat1(ci1.upper),
                stat2(ci2.lower),
                stat2(ci2.upper),
            ] {
                worst_stat = worst_stat.max((v / CHI2_95 - 1.0).abs());
            }
        }
    }
    checks.push((fitted >= 45, format!("{fitted} of 50 datasets fitted")));
    checks.push((
        worst_resid < 1e-8,
        format!("constraint residuals {worst_resid:.1e} < 1e-8"),
    ));
    checks.push((
        worst_zero < 1e-8 && max_ratio <= 0.0,
        format!("|r(theta_hat)| {worst_zero:.1e}, max r {max_ratio:.2e} <= 0"),
    ));
    checks.push((
        worst_rank < 1e-6,
        format!("rank-one ratio {worst_rank:.1e} < 1e-6"),
    ));
    checks.push((
        worst_equiv < 1e-8,
        format!("location shift changes estimates by {worst_equiv:.1e}"),
    ));
    checks.push((
        worst_stat < 1e-4,
        format!("interval endpoints -2r/delta relative error {worst_stat:.1e} < 1e-4"),
    ));

    // Constant propensity scores collapse the weighting estimators.
    let mut worst_const = 0.0_f64;
    for (s, _) in data.iter().take(10) {
        let g = split_groups(s);
        let tau = g.n1() as f64 / s.n() as f64;
        let ps = PsFit {
            alpha: DVector::from_element(1, (tau / (1.0 - tau)).ln()),
            tau_hat: vec![tau; s.n()],
            design: nalgebra::DMatrix::from_element(s.n(), 1, 1.0),
            iterations: 0,
            positivity_violations: 0,
        };
        let naive = naive_diff(s, &g);
        worst_const = worst_const
            .max((ipw(s, &ps) - naive).abs())
            .max((hajek_ipw(s, &ps) - naive).abs());
    }
    checks.push((
        worst_const < 1e-12,
        format!("constant score: ipw, hajek, naive differ by {worst_const:.1e}"),
    ));

    report(7, "property suite", checks, start)
}

fn criterion_8() -> Verdict {
    let start = Instant::now();
    let options = SimOptions {
        methods: vec![Method::Sel1, Method::Sel2, Method::Aipw],
        ..SimOptions::default()
    };
    let run = || {
        let reports: Vec<CellReport> = [(Scenario::TT, 0.3), (Scenario::FT, 0.5)]
            .into_iter()
            .map(|(sc, rho)| {
                let config = ScenarioConfig::new(100, 0.5, rho, sc, 20, 99);
                run_cell(&config, &common::calibration(0.5, rho), &options).unwrap()
            })
            .collect();
        let mut buf = Vec::new();
        write_results_csv(&mut buf, &reports).unwrap();
        buf
    };
    let a = run();
    let b = run();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(3)
        .build()
        .unwrap();
    let c = pool.install(run);
    report(
        8,
        "determinism",
        vec![(
            a == b && a == c && !a.is_empty(),
            format!(
                "{} CSV bytes identical across 3 runs and thread counts",
                a.len()
            ),
        )],
        start,
    )
}

fn main() {
    let started = Instant::now();
    let verdicts = [
        criterion_1(),
        criterion_2(),
        criterion_3(),
        criterion_4(),
        criterion_5(),
        criterion_6(),
        criterion_7(),
        criterion_8(),
    ];
    let failed: Vec<&Verdict> = verdicts.iter().filter(|v| !v.pass).collect();
    println!(
        "acceptance: {} of {} criteria passed in {:.0} s",
        verdicts.len() - failed.len(),
        verdicts.len(),
        started.elapsed().as_secs_f64()
    );
    if !failed.is_empty() {
        for v in failed {
            eprintln!("criterion {} failed: {}", v.id, v.detail);
        }
        std::process::exit(1);
    }
}
