//! The `simulate` and `power` commands.

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::Serialize;

use selate::bootstrap::MIN_REPLICATES;
use selate::simulation::{
    power_curve, run_cell, write_power_csv, write_results_csv, Calibration, Method, OutcomeDesign,
    Population, PowerRow, Scenario, ScenarioConfig, SimOptions, POPULATION_SEED, POPULATION_SIZE,
};
use selate::{Tolerances, TOLERANCES};

use crate::args::{Panel, PowerArgs, SimulateArgs};
use crate::error::{io_error, CliError, CliResult};
use crate::validate_alpha;

const DEFAULT_N: [usize; 3] = [100, 200, 400];
const DEFAULT_GRID_VALUES: [f64; 3] = [0.3, 0.5, 0.7];
const DEFAULT_N_SIM: usize = 1000;

pub const RESULTS_FILE: &str = "results.csv";
pub const POWER_FILE: &str = "power.csv";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimulateRun {
    pub panel: Option<Panel>,
    pub n: Vec<usize>,
    pub t: Vec<f64>,
    pub rho: Vec<f64>,
    pub scenarios: Vec<Scenario>,
    pub n_sim: usize,
    pub seed: u64,
    pub options: SimOptions,
    pub out_dir: PathBuf,
}

fn nonempty<T>(v: Vec<T>, what: &str) -> CliResult<Vec<T>> {
    if v.is_empty() {
        return Err(CliError::Usage(format!("empty {what} list")));
    }
    Ok(v)
}

fn check_bootstrap(b: Option<usize>) -> CliResult<Option<usize>> {
    match b {
        Some(b) if b < MIN_REPLICATES => Err(CliError::Usage(format!(
            "need at least {MIN_REPLICATES} bootstrap replicates, got {b}"
        ))),
        b => Ok(b),
    }
}

fn required<T>(v: Option<T>, flag: &str) -> CliResult<T> {
    v.ok_or_else(|| CliError::Usage(format!("{flag} is required")))
}

impl SimulateRun {
    pub fn resolve(args: SimulateArgs) -> CliResult<Self> {
        let panel = args.panel;
        let t_default = panel.map_or_else(|| DEFAULT_GRID_VALUES.to_vec(), |p| vec![p.t()]);
        let chisq = !args.points_only && panel.is_none_or(Panel::intervals);
        let run = Self {
            panel,
            n: nonempty(args.n.unwrap_or_else(|| DEFAULT_N.to_vec()), "n")?,
            t: nonempty(args.t.unwrap_or(t_default), "t")?,
            rho: nonempty(
                args.rho.unwrap_or_else(|| DEFAULT_GRID_VALUES.to_vec()),
                "rho",
            )?,
            scenarios: nonempty(
                args.scenarios.unwrap_or_else(|| Scenario::ALL.to_vec()),
                "scenario",
            )?,
            n_sim: args.n_sim.unwrap_or(DEFAULT_N_SIM),
            seed: required(args.seed, "--seed")?,
            options: SimOptions {
                methods: nonempty(
                    args.methods.unwrap_or_else(|| Method::ALL.to_vec()),
                    "method",
                )?,
                alpha: validate_alpha(args.alpha.unwrap_or(0.05))?,
                chisq,
                bootstrap: check_bootstrap(args.bootstrap)?,
                wilks: false,
            },
            out_dir: required(args.out_dir, "--out-dir")?,
        };
        for c in run.cells() {
            c.validate()?;
        }
        Ok(run)
    }

    /// Cells in output order: `n`, then `t`, then `rho`, then scenario.
    pub fn cells(&self) -> Vec<ScenarioConfig> {
        let mut out = Vec::new();
        for &n in &self.n {
            for &t in &self.t {
                for &rho in &self.rho {
                    for &s in &self.scenarios {
                        out.push(ScenarioConfig::new(n, t, rho, s, self.n_sim, self.seed));
                    }
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PowerRun {
    pub grid: Vec<f64>,
    pub base: ScenarioConfig,
    pub options: SimOptions,
    pub out_dir: PathBuf,
}

impl PowerRun {
    pub fn resolve(args: PowerArgs) -> CliResult<Self> {
        let grid = nonempty(required(args.grid, "--grid")?, "effect grid")?;
        if let Some(bad) = grid.iter().find(|v| !(0.0..=3.0).contains(*v)) {
            return Err(CliError::Usage(format!("grid value {bad} outside [0, 3]")));
        }
        let methods = nonempty(
            args.methods
                .unwrap_or_else(|| vec![Method::Sel1, Method::Sel2]),
            "method",
        )?;
        if let Some(m) = methods.iter().find(|m| m.sel().is_none()) {
            return Err(CliError::Usage(format!(
                "power curves need a likelihood ratio test; `{m}` has none"
            )));
        }
        let base = ScenarioConfig {
            n: args.n.unwrap_or(400),
            t: args.t.unwrap_or(0.5),
            rho: args.rho.unwrap_or(0.5),
            scenario: args.scenario.unwrap_or(Scenario::TT),
            design: OutcomeDesign::Main,
            n_sim: args.n_sim.unwrap_or(DEFAULT_N_SIM),
            seed: required(args.seed, "--seed")?,
        };
        base.validate()?;
        let options = SimOptions {
            methods,
            alpha: validate_alpha(args.alpha.unwrap_or(0.05))?,
            chisq: true,
            bootstrap: check_bootstrap(args.bootstrap)?,
            wilks: false,
        };
        Ok(Self {
            grid,
            base,
            options,
            out_dir: required(args.out_dir, "--out-dir")?,
        })
    }
}

#[derive(Debug, Serialize)]
struct PopulationInfo {
    size: usize,
    seed: u64,
}

/// Run metadata written next to the result CSV. Wall-clock values appear
/// only here so that the CSV depends on the settings alone.
#[derive(Debug, Serialize)]
struct Manifest<'a, S: Serialize> {
    tool: &'static str,
    version: &'static str,
    command: &'static str,
    seed: u64,
    settings: &'a S,
    population: PopulationInfo,
    calibrations: &'a [Calibration],
    tolerances: Tolerances,
    outputs: Vec<&'static str>,
    jobs: usize,
    created_unix: u64,
    elapsed_seconds: f64,
}

fn write_manifest<S: Serialize>(
    dir: &Path,
    command: &'static str,
    seed: u64,
    settings: &S,
    calibrations: &[Calibration],
    output: &'static str,
    started: Instant,
) -> CliResult<()> {
    let manifest = Manifest {
        tool: "selate",
        version: env!("CARGO_PKG_VERSION"),
        command,
        seed,
        settings,
        population: PopulationInfo {
            size: POPULATION_SIZE,
            seed: POPULATION_SEED,
        },
        calibrations,
        tolerances: TOLERANCES,
        outputs: vec![output],
        jobs: rayon::current_num_threads(),
        created_unix: SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map_or(0, |d| d.as_secs()),
        elapsed_seconds: started.elapsed().as_secs_f64(),
    };
    let path = dir.join(MANIFEST_FILE);
    let json =
        serde_json::to_string_pretty(&manifest).map_err(|e| CliError::Numerical(e.to_string()))?;
    std::fs::write(&path, format!("{json}\n")).map_err(|e| io_error(&path, e))
}

fn create_output(dir: &Path, name: &str) -> CliResult<(PathBuf, BufWriter<File>)> {
    std::fs::create_dir_all(dir).map_err(|e| io_error(dir, e))?;
    let path = dir.join(name);
    let file = File::create(&path).map_err(|e| io_error(&path, e))?;
    Ok((path, BufWriter::new(file)))
}

fn calibrations(
    population: &Population,
    pairs: impl IntoIterator<Item = (f64, f64)>,
) -> CliResult<Vec<Calibration>> {
    let mut out: Vec<Calibration> = Vec::new();
    for (t, rho) in pairs {
        if !out.iter().any(|c| c.t == t && c.rho == rho) {
            out.push(Calibration::compute(population, t, rho)?);
        }
    }
    Ok(out)
}

fn lookup(calibs: &[Calibration], t: f64, rho: f64) -> &Calibration {
    calibs
        .iter()
        .find(|c| c.t == t && c.rho == rho)
        .expect("calibration computed for every cell")
}

pub fn run_simulate(args: SimulateArgs) -> CliResult<()> {
    let run = SimulateRun::resolve(args)?;
    let started = Instant::now();
    let cells = run.cells();
    eprintln!("calibrating {} (t, rho) pairs", run.t.len() * run.rho.len());
    let population = Population::standard();
    let calibs = calibrations(&population, cells.iter().map(|c| (c.t, c.rho)))?;
    drop(population);

    let mut reports = Vec::with_capacity(cells.len());
    for (k, config) in cells.iter().enumerate() {
        let t0 = Instant::now();
        let report = run_cell(config, lookup(&calibs, config.t, config.rho), &run.options)?;
        eprintln!(
            "cell {}/{}: n = {}, t = {}, rho = {}, {} ({:.1} s)",
            k + 1,
            cells.len(),
            config.n,
            config.t,
            config.rho,
            config.scenario,
            t0.elapsed().as_secs_f64()
        );
        reports.push(report);
    }

    let (path, writer) = create_output(&run.out_dir, RESULTS_FILE)?;
    write_results_csv(writer, &reports).map_err(|e| io_error(&path, e))?;
    write_manifest(
        &run.out_dir,
        "simulate",
        run.seed,
        &run,
        &calibs,
        RESULTS_FILE,
        started,
    )?;
    println!(
        "wrote {} and {}",
        path.display(),
        run.out_dir.join(MANIFEST_FILE).display()
    );
    Ok(())
}

fn render_power(rows: &[PowerRow]) -> String {
    let mut s = format!(
        "{:>8}  {:<16}{:>10}{:>10}\n",
        "theta", "test", "reject", "dropped"
    );
    for r in rows {
        s.push_str(&format!(
            "{:>8.3}  {:<16}{:>10.3}{:>10}\n",
            r.theta_true,
            format!("{}_{}", r.method, r.interval_type),
            r.rejection_rate,
            r.n_dropped
        ));
    }
    s
}

pub fn run_power(args: PowerArgs) -> CliResult<()> {
    let run = PowerRun::resolve(args)?;
    let started = Instant::now();
    eprintln!("calibrating (t, rho) = ({}, {})", run.base.t, run.base.rho);
    let calib = Calibration::compute(&Population::standard(), run.base.t, run.base.rho)?;
    let rows = power_curve(&run.base, &calib, &run.grid, &run.options)?;

    let (path, writer) = create_output(&run.out_dir, POWER_FILE)?;
    write_power_csv(writer, &rows).map_err(|e| io_error(&path, e))?;
    write_manifest(
        &run.out_dir,
        "power",
        run.base.seed,
        &run,
        &[calib],
        POWER_FILE,
        started,
    )?;
    print!("{}", render_power(&rows));
    println!(
        "wrote {} and {}",
        path.display(),
        run.out_dir.join(MANIFEST_FILE).display()
    );
    Ok(())
}
