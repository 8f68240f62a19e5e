//! Bundled simulation scenarios.
//!
//! `two_state` and `three_state` are the benchmark generating processes used
//! by the simulation-study tests: stable sparse VAR blocks whose lag effects
//! decay from lag 1 to lag 3 within every outcome and state (the last lag
//! may break the decay, mimicking seasonality), covariances drawn once from
//! an inverse-Wishart centered near the identity and frozen as literals, and
//! dwell regressions with distinct sojourn behavior per state. `app_like`
//! mimics the application-scale dimensions (T = 1096 days, p = 5, H = 7,
//! m = 28) with weather-like covariates.

use crate::emission::VarParams;
use crate::hidden::{HazardParams, InitialDistribution, LinkFn, SwitchMatrix};
use crate::model::{Dims, ModelParams};
use crate::sim::{CovariateSpec, SimConfig};
use ndarray::{array, Array2};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// Named bundled scenarios.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scenario {
    TwoState,
    ThreeState,
    AppLike,
}

impl Scenario {
    pub fn parse(name: &str) -> Option<Self> {
        match name {
            "two_state" => Some(Scenario::TwoState),
            "three_state" => Some(Scenario::ThreeState),
            "app_like" => Some(Scenario::AppLike),
            _ => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Scenario::TwoState => "two_state",
            Scenario::ThreeState => "three_state",
            Scenario::AppLike => "app_like",
        }
    }

    pub fn default_t_len(&self) -> usize {
        match self {
            Scenario::TwoState | Scenario::ThreeState => 1100,
            Scenario::AppLike => 1096,
        }
    }

    pub fn truth(&self) -> ModelParams {
        match self {
            Scenario::TwoState => two_state_truth(),
            Scenario::ThreeState => three_state_truth(),
            Scenario::AppLike => app_like_truth(),
        }
    }

    /// Simulation config with the scenario's covariate generator.
    pub fn sim_config(&self, t_len: usize, seed: u64) -> SimConfig {
        let mut config = SimConfig::new(self.truth(), t_len, seed);
        if *self == Scenario::AppLike {
            config.covariates = app_like_covariates(t_len, seed);
        }
        config
    }
}

/// Two-state benchmark truth: p = 3, H = 4, one shared covariate on both
/// processes.
pub fn two_state_truth() -> ModelParams {
    let dims = Dims { k: 2, p: 3, h: 4, j: 1, l: 1, m: 12 };

    // Covariances drawn from inverse-Wishart(7 I, 3) and frozen.
    let sigma1 = array![
        [1.10, 0.32, -0.18],
        [0.32, 1.35, 0.41],
        [-0.18, 0.41, 0.92]
    ];
    let sigma2 = array![
        [0.82, -0.24, 0.10],
        [-0.24, 1.12, -0.33],
        [0.10, -0.33, 1.21]
    ];

    let state1 = VarParams {
        intercept: array![3.0, 1.5, 2.0],
        exog: array![[0.5], [0.0], [0.0]],
        lags: vec![
            array![[0.25, 0.12, 0.00], [0.00, 0.22, 0.00], [0.00, 0.00, 0.20]],
            array![[0.15, 0.00, 0.00], [0.00, 0.14, 0.00], [0.00, 0.00, 0.13]],
            array![[0.10, 0.00, 0.00], [0.00, 0.10, 0.00], [0.00, 0.00, 0.10]],
            array![[0.15, 0.00, 0.00], [0.00, 0.00, 0.00], [0.00, 0.00, 0.00]],
        ],
        sigma: sigma1,
    };
    let state2 = VarParams {
        intercept: array![-1.0, -2.0, -1.5],
        exog: array![[-0.2], [0.4], [-0.1]],
        lags: vec![
            array![[0.20, 0.00, 0.00], [0.12, 0.25, 0.00], [0.00, 0.00, 0.28]],
            array![[0.15, 0.00, 0.00], [0.00, 0.16, 0.00], [0.00, 0.00, 0.18]],
            array![[0.11, 0.00, 0.00], [0.00, 0.10, 0.00], [0.00, 0.00, 0.11]],
            array![[0.00, 0.00, 0.00], [0.00, 0.14, 0.00], [0.00, 0.00, 0.00]],
        ],
        sigma: sigma2,
    };

    ModelParams {
        dims,
        hazard: HazardParams {
            beta0: vec![-1.0, -2.0],
            beta1: vec![0.15, 0.35],
            beta2: array![[-0.5], [0.5]],
            link: LinkFn::Cloglog,
        },
        omega: SwitchMatrix::row_reversed_identity(),
        pi: InitialDistribution { pi: vec![0.5, 0.5] },
        var: vec![state1, state2],
    }
}

/// Three-state benchmark truth extending the two-state configuration.
pub fn three_state_truth() -> ModelParams {
    let two = two_state_truth();
    let dims = Dims { k: 3, ..two.dims };

    let sigma3 = array![
        [1.05, 0.20, 0.15],
        [0.20, 0.88, -0.12],
        [0.15, -0.12, 1.18]
    ];
    let state3 = VarParams {
        intercept: array![0.75, 0.25, -0.25],
        exog: array![[0.6], [0.0], [0.1]],
        lags: vec![
            array![[0.24, 0.00, 0.00], [0.00, 0.20, 0.10], [0.00, 0.00, 0.22]],
            array![[0.16, 0.00, 0.00], [0.00, 0.13, 0.00], [0.00, 0.00, 0.14]],
            array![[0.10, 0.00, 0.00], [0.00, 0.10, 0.00], [0.00, 0.00, 0.10]],
            array![[0.00, 0.00, 0.00], [0.00, 0.12, 0.00], [0.00, 0.00, 0.00]],
        ],
        sigma: sigma3,
    };

    ModelParams {
        dims,
        hazard: HazardParams {
            beta0: vec![-1.0, -2.0, -0.5],
            beta1: vec![0.15, 0.35, 0.0],
            beta2: array![[-0.5], [0.5], [0.1]],
            link: LinkFn::Cloglog,
        },
        omega: SwitchMatrix {
            omega: array![
                [0.0, 0.5, 0.5],
                [0.9, 0.0, 0.1],
                [0.45, 0.55, 0.0]
            ],
        },
        pi: InitialDistribution {
            pi: vec![1.0 / 3.0; 3],
        },
        var: vec![two.var[0].clone(), two.var[1].clone(), state3],
    }
}

/// Application-scale truth: five outcomes, weekly seasonality through lag 7,
/// two emission covariates (temperature-like, weekend flag) and two hazard
/// covariates (precipitation-like, wind-like).
pub fn app_like_truth() -> ModelParams {
    let dims = Dims { k: 2, p: 5, h: 7, j: 2, l: 2, m: 28 };

    let mut lags1 = vec![Array2::zeros((5, 5)); 7];
    let mut lags2 = vec![Array2::zeros((5, 5)); 7];
    for i in 0..5 {
        lags1[0][[i, i]] = 0.30 - 0.02 * i as f64;
        lags1[1][[i, i]] = 0.16 - 0.01 * i as f64;
        lags2[0][[i, i]] = 0.24 + 0.01 * i as f64;
        lags2[1][[i, i]] = 0.13;
    }
    // Cross-pollutant feedback in the high state.
    lags1[0][[0, 1]] = 0.12;
    lags1[0][[3, 4]] = 0.10;
    lags2[0][[1, 0]] = 0.10;
    // Weekly seasonality at lag 7 on two outcomes.
    lags1[6][[0, 0]] = 0.14;
    lags1[6][[3, 3]] = 0.12;
    lags2[6][[0, 0]] = 0.10;

    let sigma1 = array![
        [1.00, 0.45, 0.18, 0.30, 0.28],
        [0.45, 0.85, 0.15, 0.25, 0.24],
        [0.18, 0.15, 0.70, 0.22, 0.12],
        [0.30, 0.25, 0.22, 0.90, 0.40],
        [0.28, 0.24, 0.12, 0.40, 0.95]
    ];
    let sigma2 = array![
        [0.80, 0.40, 0.05, 0.08, 0.06],
        [0.40, 0.75, 0.04, 0.07, 0.05],
        [0.05, 0.04, 0.65, 0.20, 0.15],
        [0.08, 0.07, 0.20, 0.70, 0.30],
        [0.06, 0.05, 0.15, 0.30, 0.85]
    ];

    let state1 = VarParams {
        intercept: array![2.6, 2.5, 0.7, 0.5, 1.4],
        exog: array![
            [-0.06, -0.80],
            [-0.02, -0.30],
            [-0.02, 0.00],
            [-0.01, -0.40],
            [-0.01, -0.70]
        ],
        lags: lags1,
        sigma: sigma1,
    };
    let state2 = VarParams {
        intercept: array![2.1, 2.9, 0.6, 0.4, 1.5],
        exog: array![
            [-0.01, -1.00],
            [-0.02, -0.65],
            [0.00, 0.00],
            [0.00, 0.00],
            [-0.02, -0.20]
        ],
        lags: lags2,
        sigma: sigma2,
    };

    ModelParams {
        dims,
        hazard: HazardParams {
            // High-pollution state persists unless washed out; the clean
            // state follows a near-geometric sojourn of a few days.
            beta0: vec![-2.6, 0.1],
            beta1: vec![-0.10, -0.02],
            beta2: array![[2.0, 0.4], [-1.2, -0.4]],
            link: LinkFn::Cloglog,
        },
        omega: SwitchMatrix::row_reversed_identity(),
        pi: InitialDistribution { pi: vec![0.5, 0.5] },
        var: vec![state1, state2],
    }
}

/// Weather-like covariate paths for the application scenario: a seasonal
/// temperature proxy and a weekend flag on the emissions; precipitation- and
/// wind-like paths on the hazards.
pub fn app_like_covariates(t_len: usize, seed: u64) -> CovariateSpec {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_c0de);
    let mut x = Array2::zeros((t_len, 2));
    let mut z = Array2::zeros((t_len, 2));
    let year = 365.25;
    let mut wind_prev: f64 = 0.0;
    for t in 0..t_len {
        let phase = 2.0 * std::f64::consts::PI * (t as f64) / year;
        let noise: f64 = StandardNormal.sample(&mut rng);
        // Temperature proxy in degrees, centered by season.
        x[[t, 0]] = 8.0 - 7.0 * phase.cos() + 1.5 * noise;
        // Weekend flag on a 7-day cycle.
        x[[t, 1]] = if t % 7 >= 5 { 1.0 } else { 0.0 };
        // Precipitation-like: frequent zeros, heavy right tail (log scale).
        let wet: f64 = rng.random();
        let rain_noise: f64 = StandardNormal.sample(&mut rng);
        z[[t, 0]] = if wet < 0.62 {
            (0.4 + 0.35 * rain_noise.abs()).min(2.5)
        } else {
            0.0
        };
        // Wind-like AR(1), strictly positive.
        let shock: f64 = StandardNormal.sample(&mut rng);
        wind_prev = 0.6 * wind_prev + 0.8 * shock;
        z[[t, 1]] = (2.5 + wind_prev).max(0.2);
    }
    CovariateSpec::Given { x, z }
}
