//! Law-of-large-numbers checks for the simulator and reproducibility of the
//! parametric bootstrap.

use hsvar_core::em::EmConfig;
use hsvar_core::sim::{BootstrapGrid, SimConfig};
use hsvar_core::{dwell_pmf, fit, LinkFn, Scenario};
use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn simulated_dwell_law_matches_dwell_pmf() {
    // Constant hazard 0.3: completed sojourns against the analytic pmf in
    // Kolmogorov distance.
    let t_len = 200_000;
    let mut truth = Scenario::TwoState.truth();
    let q: f64 = 0.3;
    truth.hazard.beta0 = vec![LinkFn::Cloglog.apply(q); 2];
    truth.hazard.beta1 = vec![0.0; 2];
    truth.hazard.beta2 = Array2::zeros((2, 1));

    let z = Array2::zeros((t_len, 1));
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (states, dwells) =
        hsvar_core::sim::simulate_chain(&truth, t_len, &z, &mut rng).unwrap();

    // Completed sojourn lengths: dwell value right before each reset.
    let mut sojourns = Vec::new();
    for t in 1..t_len {
        if states[t] != states[t - 1] {
            sojourns.push(dwells[t - 1]);
        }
    }
    assert!(sojourns.len() > 50_000);

    let d_max = 60;
    let z_path = Array2::zeros((d_max, 1));
    let pmf = dwell_pmf(0, &truth.hazard, &z_path, d_max).unwrap();
    let mut model_cdf = 0.0;
    let mut kolmogorov: f64 = 0.0;
    let n = sojourns.len() as f64;
    for d in 1..=d_max {
        model_cdf += pmf[d - 1];
        let empirical = sojourns.iter().filter(|&&s| s <= d).count() as f64 / n;
        kolmogorov = kolmogorov.max((empirical - model_cdf).abs());
    }
    assert!(kolmogorov < 0.01, "Kolmogorov distance {kolmogorov}");

    // Geometric sanity: the pmf itself is geometric(0.3).
    for d in 1..=10 {
        let expect = q * (1.0 - q).powi(d as i32 - 1);
        assert!((pmf[d - 1] - expect).abs() < 1e-12);
    }
}

#[test]
fn bootstrap_is_reproducible_and_b1_degenerates() {
    let scenario = Scenario::TwoState;
    let sim = hsvar_core::simulate(&scenario.sim_config(320, 13)).unwrap();
    let mut config = EmConfig::new(4, 8, LinkFn::Cloglog);
    config.max_iter = 60;
    let fitted = fit(&sim.data, 2, 0.8, 1, &config).unwrap();
    let grid = BootstrapGrid {
        k_list: vec![2],
        lambda0_list: vec![0.8],
        seeds: vec![1],
    };

    let a = hsvar_core::parametric_bootstrap(&sim.data, &fitted, 3, &grid, &config, 100).unwrap();
    let b = hsvar_core::parametric_bootstrap(&sim.data, &fitted, 3, &grid, &config, 100).unwrap();
    assert_eq!(a.k_selected, b.k_selected);
    assert_eq!(a.summaries.len(), b.summaries.len());
    for (x, y) in a.summaries.iter().zip(b.summaries.iter()) {
        assert_eq!(x.estimate.to_bits(), y.estimate.to_bits());
        assert_eq!(x.lower.to_bits(), y.lower.to_bits());
        assert_eq!(x.upper.to_bits(), y.upper.to_bits());
        assert_eq!(x.selection, y.selection);
    }

    // B = 1: intervals collapse onto the single replica's estimate.
    let single =
        hsvar_core::parametric_bootstrap(&sim.data, &fitted, 1, &grid, &config, 55).unwrap();
    assert_eq!(single.completed, 1);
    if single.k_selected[0] == 2 {
        for s in &single.summaries {
            assert_eq!(s.lower, s.upper, "degenerate interval for {}", s.block);
        }
    }
}

#[test]
fn simulation_distinct_seeds_differ() {
    let config_a = SimConfig::new(Scenario::TwoState.truth(), 200, 1);
    let config_b = SimConfig::new(Scenario::TwoState.truth(), 200, 2);
    let a = hsvar_core::simulate(&config_a).unwrap();
    let b = hsvar_core::simulate(&config_b).unwrap();
    assert_ne!(a.data.y, b.data.y);
}
