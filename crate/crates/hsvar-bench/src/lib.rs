//! Shared instance builders for the benchmarks.

use hsvar_core::{Dataset, EmConfig, LinkFn, ModelParams, Scenario, SimOutput};

/// Application-scale simulated instance (T = 1096, p = 5, H = 7, m = 28).
pub fn app_instance() -> (SimOutput, ModelParams, EmConfig) {
    let scenario = Scenario::AppLike;
    let sim = hsvar_core::simulate(&scenario.sim_config(1096, 7)).expect("simulate");
    let config = EmConfig::new(7, 28, LinkFn::Cloglog);
    (sim, scenario.truth(), config)
}

/// Benchmark-scale simulated instance (T = 1100, p = 3, H = 4, m = 12).
pub fn benchmark_instance() -> (SimOutput, ModelParams, EmConfig) {
    let scenario = Scenario::TwoState;
    let sim = hsvar_core::simulate(&scenario.sim_config(1100, 7)).expect("simulate");
    let config = EmConfig::new(4, 12, LinkFn::Cloglog);
    (sim, scenario.truth(), config)
}

/// State-0 posterior weights of the truth, for weighting benchmarks.
pub fn truth_weights(sim: &SimOutput) -> Vec<f64> {
    sim.states
        .iter()
        .map(|&s| if s == 0 { 1.0 } else { 0.0 })
        .collect()
}

pub fn dataset(sim: &SimOutput) -> &Dataset {
    &sim.data
}
