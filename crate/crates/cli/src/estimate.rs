use std::fmt::Write as _;
use std::path::PathBuf;

use selate::{
    estimate_ate, load_sample, ColumnSchema, EstimateOptions, EstimateReport, Interval, ModelSpec,
};

use crate::args::{EstimateArgs, Format};
use crate::error::{io_error, CliError, CliResult};
use crate::validate_alpha;

#[derive(Debug, Clone)]
pub struct EstimateRun {
    pub input: PathBuf,
    pub schema: ColumnSchema,
    pub options: EstimateOptions,
    pub format: Format,
    pub output: Option<PathBuf>,
}

impl EstimateRun {
    pub fn resolve(args: EstimateArgs) -> CliResult<Self> {
        let input = args
            .input
            .ok_or_else(|| CliError::Usage("an input CSV is required (--input)".into()))?;
        let defaults = ColumnSchema::default();
        let schema = ColumnSchema {
            treatment: args.treatment_col.unwrap_or(defaults.treatment),
            outcome: args.outcome_col.unwrap_or(defaults.outcome),
            covariates: args.covariate_cols.unwrap_or_default(),
        };
        let base = EstimateOptions::default();
        let options = EstimateOptions {
            methods: args.methods.unwrap_or(base.methods),
            alpha: validate_alpha(args.alpha.unwrap_or(base.alpha))?,
            bootstrap: args.bootstrap,
            seed: args.seed.unwrap_or(base.seed),
        };
        if options.methods.is_empty() {
            return Err(CliError::Usage("no methods selected".into()));
        }
        Ok(Self {
            input,
            schema,
            options,
            format: args.format.unwrap_or(Format::Human),
            output: args.output,
        })
    }
}

fn fmt_opt(v: Option<f64>, width: usize) -> String {
    v.map_or_else(|| format!("{:>width$}", "-"), |v| format!("{v:>width$.4}"))
}

fn fmt_ci(ci: Option<Interval>) -> String {
    ci.map_or_else(
        || format!("{:>20}", "-"),
        |c| format!("[{:>8.4}, {:>8.4}]", c.lower, c.upper),
    )
}

/// Plain-text rendering of an estimation report.
pub fn render_human(input: &str, report: &EstimateReport) -> String {
    let mut s = String::new();
    let level = 100.0 * (1.0 - report.alpha);
    let _ = writeln!(s, "input: {input}");
    let _ = writeln!(
        s,
        "n = {} (treated {}, control {}); covariates: {}",
        report.n,
        report.n_treated,
        report.n_control,
        report.covariates.join(", ")
    );
    let _ = writeln!(
        s,
        "propensity model: {} Newton iterations, {} positivity warnings",
        report.ps_iterations, report.positivity_violations
    );
    let _ = writeln!(s);
    let header = format!(
        "{:<7}{:>10}{:>10}{:>10}  {:>20}  {:>20}",
        "method",
        "estimate",
        "se",
        "delta",
        format!("{level}% CI chi-square"),
        format!("{level}% CI bootstrap")
    );
    let _ = writeln!(s, "{}", header.trim_end());
    for m in &report.methods {
        let row = format!(
            "{:<7}{}{}{}  {}  {}",
            m.method.to_string(),
            fmt_opt(m.theta_hat, 10),
            fmt_opt(m.se, 10),
            fmt_opt(m.delta, 10),
            fmt_ci(m.ci_chisq),
            fmt_ci(m.ci_bootstrap)
        );
        let _ = writeln!(s, "{}", row.trim_end());
    }
    let notes: Vec<String> = report
        .methods
        .iter()
        .flat_map(|m| {
            let mut v = Vec::new();
            if let Some(e) = &m.error {
                v.push(format!("{}: {e}", m.method));
            }
            if let Some(f) = m.bootstrap_failed.filter(|&f| f > 0) {
                v.push(format!(
                    "{}: {f} bootstrap replicates failed and were dropped",
                    m.method
                ));
            }
            v
        })
        .collect();
    if report.positivity_violations > 0 {
        let _ = writeln!(
            s,
            "\nwarning: fitted propensity scores at the numerical boundary for {} units",
            report.positivity_violations
        );
    }
    if !notes.is_empty() {
        let _ = writeln!(s, "\nnotes:");
        for n in notes {
            let _ = writeln!(s, "  {n}");
        }
    }
    s
}

pub fn run(args: EstimateArgs) -> CliResult<()> {
    let run = EstimateRun::resolve(args)?;
    let sample = load_sample(&run.input, &run.schema).map_err(|e| match e {
        selate::Error::Io(io) => io_error(&run.input, io),
        e => CliError::from(e),
    })?;
    let report = estimate_ate(&sample, &ModelSpec::full(sample.p()), &run.options)?;
    let json =
        serde_json::to_string_pretty(&report).map_err(|e| CliError::Numerical(e.to_string()))?;
    if let Some(path) = &run.output {
        std::fs::write(path, format!("{json}\n")).map_err(|e| io_error(path, e))?;
    }
    match run.format {
        Format::Human => print!(
            "{}",
            render_human(&run.input.display().to_string(), &report)
        ),
        Format::Json => println!("{json}"),
    }
    if report.all_failed() {
        let first = report
            .methods
            .iter()
            .find_map(|m| m.error.clone())
            .unwrap_or_default();
        return Err(CliError::Numerical(format!(
            "no method produced an estimate ({first})"
        )));
    }
    Ok(())
}
