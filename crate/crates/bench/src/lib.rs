//! Fixtures shared by the benchmarks.

use selate::simulation::{generate_sample, Calibration, Population, Scenario, ScenarioConfig};
use selate::{fit_nuisance, FittedNuisance, ObservedSample};

/// A sample of size `n` from the study design at `t = rho = 0.5` with both
/// working models fitted. A smaller calibration population keeps setup quick.
pub fn fixture(n: usize, seed: u64) -> (ObservedSample, FittedNuisance) {
    let population = Population::new(100_000, 1);
    let calib = Calibration::compute(&population, 0.5, 0.5).expect("calibration");
    let config = ScenarioConfig::new(n, 0.5, 0.5, Scenario::TT, 1, seed);
    let (sample, _) = generate_sample(&config, &calib, 0).expect("sample");
    let nuisance = fit_nuisance(&sample, &Scenario::TT.model_spec()).expect("working models");
    (sample, nuisance)
}
