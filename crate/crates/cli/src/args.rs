//! Command-line flags and the matching config file sections.
//!
//! Every option can be given as a flag or as a key of the same name (with
//! underscores) in the config file; a flag overrides the file.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Deserialize;

use selate::simulation::{Method, Scenario};

#[derive(Debug, Parser)]
#[command(
    name = "selate",
    version,
    about = "Doubly robust ATE estimation and inference with sample empirical likelihood"
)]
pub struct Cli {
    /// TOML config file with optional [estimate], [simulate] and [power] sections.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Worker threads; defaults to the number of available cores.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Estimate the average treatment effect on a CSV data set.
    Estimate(EstimateArgs),
    /// Run Monte Carlo cells of the simulation design.
    Simulate(SimulateArgs),
    /// Estimate rejection rates of the zero-effect test over a grid of true effects.
    Power(PowerArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Human,
    Json,
}

/// Predefined grids of the standard study layout, 27 cells each over `n`,
/// `rho` and the scenario. `table1` to `table3` hold point estimates for
/// t = 0.3, 0.5, 0.7; `table4` to `table6` add confidence intervals for the
/// same t values.
#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize, serde::Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Panel {
    Table1,
    Table2,
    Table3,
    Table4,
    Table5,
    Table6,
}

impl Panel {
    pub fn t(self) -> f64 {
        match self {
            Panel::Table1 | Panel::Table4 => 0.3,
            Panel::Table2 | Panel::Table5 => 0.5,
            Panel::Table3 | Panel::Table6 => 0.7,
        }
    }

    pub fn intervals(self) -> bool {
        matches!(self, Panel::Table4 | Panel::Table5 | Panel::Table6)
    }
}

fn parse_method(s: &str) -> Result<Method, String> {
    s.parse().map_err(|e: selate::Error| e.to_string())
}

fn parse_scenario(s: &str) -> Result<Scenario, String> {
    s.parse().map_err(|e: selate::Error| e.to_string())
}

#[derive(Debug, Clone, Default, Args, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimateArgs {
    /// Input CSV with a header row.
    #[arg(short, long)]
    pub input: Option<PathBuf>,
    /// Treatment column (values 0 or 1) [default: t]
    #[arg(long)]
    pub treatment_col: Option<String>,
    /// Outcome column [default: y]
    #[arg(long)]
    pub outcome_col: Option<String>,
    /// Comma-separated covariate columns [default: all other columns]
    #[arg(long, value_delimiter = ',')]
    pub covariate_cols: Option<Vec<String>>,
    /// Comma-separated methods among sel1, sel2, aipw, ipw, hajek, naive [default: all]
    #[arg(long, value_delimiter = ',', value_parser = parse_method)]
    pub methods: Option<Vec<Method>>,
    /// One minus the confidence level [default: 0.05]
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Bootstrap replicates for the SEL intervals; omit to skip them.
    #[arg(short = 'B', long)]
    pub bootstrap: Option<usize>,
    /// Bootstrap seed [default: 1]
    #[arg(long)]
    pub seed: Option<u64>,
    /// Report format on standard output [default: human]
    #[arg(long, value_enum)]
    pub format: Option<Format>,
    /// Also write the JSON report to this file.
    #[arg(short, long)]
    pub output: Option<PathBuf>,
}

impl EstimateArgs {
    pub fn merge(self, file: Self) -> Self {
        Self {
            input: self.input.or(file.input),
            treatment_col: self.treatment_col.or(file.treatment_col),
            outcome_col: self.outcome_col.or(file.outcome_col),
            covariate_cols: self.covariate_cols.or(file.covariate_cols),
            methods: self.methods.or(file.methods),
            alpha: self.alpha.or(file.alpha),
            bootstrap: self.bootstrap.or(file.bootstrap),
            seed: self.seed.or(file.seed),
            format: self.format.or(file.format),
            output: self.output.or(file.output),
        }
    }
}

#[derive(Debug, Clone, Default, Args, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateArgs {
    /// Predefined grid; explicit grid flags override its values.
    #[arg(long, value_enum)]
    pub panel: Option<Panel>,
    /// Comma-separated sample sizes [default: 100,200,400]
    #[arg(long, value_delimiter = ',')]
    pub n: Option<Vec<usize>>,
    /// Comma-separated treated proportions [default: 0.3,0.5,0.7]
    #[arg(long, value_delimiter = ',')]
    pub t: Option<Vec<f64>>,
    /// Comma-separated predictor-outcome correlations [default: 0.3,0.5,0.7]
    #[arg(long, value_delimiter = ',')]
    pub rho: Option<Vec<f64>>,
    /// Comma-separated scenarios among TT, TF, FT [default: all]
    #[arg(long, value_delimiter = ',', value_parser = parse_scenario)]
    pub scenarios: Option<Vec<Scenario>>,
    /// Replicates per cell [default: 1000]
    #[arg(long)]
    pub n_sim: Option<usize>,
    /// Comma-separated methods [default: all]
    #[arg(long, value_delimiter = ',', value_parser = parse_method)]
    pub methods: Option<Vec<Method>>,
    /// One minus the confidence level [default: 0.05]
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Bootstrap replicates per sample for the SEL intervals; omit to skip them.
    #[arg(short = 'B', long)]
    pub bootstrap: Option<usize>,
    /// Skip the chi-square intervals and report point estimates only.
    #[arg(long)]
    #[serde(default)]
    pub points_only: bool,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Directory receiving results.csv and manifest.json.
    #[arg(short, long)]
    pub out_dir: Option<PathBuf>,
}

impl SimulateArgs {
    pub fn merge(self, file: Self) -> Self {
        Self {
            panel: self.panel.or(file.panel),
            n: self.n.or(file.n),
            t: self.t.or(file.t),
            rho: self.rho.or(file.rho),
            scenarios: self.scenarios.or(file.scenarios),
            n_sim: self.n_sim.or(file.n_sim),
            methods: self.methods.or(file.methods),
            alpha: self.alpha.or(file.alpha),
            bootstrap: self.bootstrap.or(file.bootstrap),
            points_only: self.points_only || file.points_only,
            seed: self.seed.or(file.seed),
            out_dir: self.out_dir.or(file.out_dir),
        }
    }
}

#[derive(Debug, Clone, Default, Args, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PowerArgs {
    /// Comma-separated true effects in [0, 3].
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    pub grid: Option<Vec<f64>>,
    /// Sample size [default: 400]
    #[arg(long)]
    pub n: Option<usize>,
    /// Treated proportion [default: 0.5]
    #[arg(long)]
    pub t: Option<f64>,
    /// Predictor-outcome correlation [default: 0.5]
    #[arg(long)]
    pub rho: Option<f64>,
    /// TT, TF or FT [default: TT]
    #[arg(long, value_parser = parse_scenario)]
    pub scenario: Option<Scenario>,
    /// Replicates per grid point [default: 1000]
    #[arg(long)]
    pub n_sim: Option<usize>,
    /// Comma-separated SEL methods [default: sel1,sel2]
    #[arg(long, value_delimiter = ',', value_parser = parse_method)]
    pub methods: Option<Vec<Method>>,
    /// Test level [default: 0.05]
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Bootstrap replicates per sample; adds bootstrap-calibrated tests.
    #[arg(short = 'B', long)]
    pub bootstrap: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Directory receiving power.csv and manifest.json.
    #[arg(short, long)]
    pub out_dir: Option<PathBuf>,
}

impl PowerArgs {
    pub fn merge(self, file: Self) -> Self {
        Self {
            grid: self.grid.or(file.grid),
            n: self.n.or(file.n),
            t: self.t.or(file.t),
            rho: self.rho.or(file.rho),
            scenario: self.scenario.or(file.scenario),
            n_sim: self.n_sim.or(file.n_sim),
            methods: self.methods.or(file.methods),
            alpha: self.alpha.or(file.alpha),
            bootstrap: self.bootstrap.or(file.bootstrap),
            seed: self.seed.or(file.seed),
            out_dir: self.out_dir.or(file.out_dir),
        }
    }
}

/// Contents of a `--config` file.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub jobs: Option<usize>,
    #[serde(default)]
    pub estimate: EstimateArgs,
    #[serde(default)]
    pub simulate: SimulateArgs,
    #[serde(default)]
    pub power: PowerArgs,
}
