//! Shared builders for randomized test instances.

use hsvar_core::{
    Dataset, Dims, HazardParams, InitialDistribution, LinkFn, ModelParams, SwitchMatrix, VarParams,
};
use ndarray::{Array1, Array2};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn random_pd_matrix(p: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    let r = Array2::from_shape_fn((p, p), |_| rng.random::<f64>() - 0.5);
    let mut sigma = Array2::zeros((p, p));
    for a in 0..p {
        for b in 0..p {
            let mut acc = 0.0;
            for c in 0..p {
                acc += r[[a, c]] * r[[b, c]];
            }
            sigma[[a, b]] = acc + if a == b { 0.3 } else { 0.0 };
        }
    }
    sigma
}

/// Random stable VAR block: lag magnitudes shrink until the companion
/// spectral radius is below 0.95.
pub fn random_stable_var(p: usize, j: usize, h: usize, rng: &mut ChaCha8Rng) -> VarParams {
    loop {
        let var = VarParams {
            intercept: Array1::from_shape_fn(p, |_| rng.random::<f64>() * 4.0 - 2.0),
            exog: Array2::from_shape_fn((p, j), |_| rng.random::<f64>() - 0.5),
            lags: (1..=h)
                .map(|lag| {
                    Array2::from_shape_fn((p, p), |(r, c)| {
                        let scale = 0.5 / lag as f64;
                        if r == c {
                            (rng.random::<f64>() - 0.3) * scale
                        } else if rng.random::<f64>() < 0.4 {
                            (rng.random::<f64>() - 0.5) * scale * 0.5
                        } else {
                            0.0
                        }
                    })
                })
                .collect(),
            sigma: random_pd_matrix(p, rng),
        };
        let report = hsvar_core::stability_check(std::slice::from_ref(&var));
        if report.states[0].spectral_radius < 0.95 {
            return var;
        }
    }
}

/// Random two-state model with one hazard covariate.
pub fn random_model(p: usize, j: usize, h: usize, m: usize, rng: &mut ChaCha8Rng) -> ModelParams {
    let k = 2;
    let l = 1;
    let dims = Dims { k, p, h, j, l, m };
    let hazard = HazardParams {
        beta0: (0..k).map(|_| rng.random::<f64>() * 2.0 - 2.0).collect(),
        beta1: (0..k).map(|_| rng.random::<f64>() * 0.6 - 0.2).collect(),
        beta2: Array2::from_shape_fn((k, l), |_| rng.random::<f64>() * 1.6 - 0.8),
        link: LinkFn::Cloglog,
    };
    let mut pi = vec![0.0; k];
    let mut total = 0.0;
    for v in pi.iter_mut() {
        *v = rng.random::<f64>() + 0.2;
        total += *v;
    }
    for v in pi.iter_mut() {
        *v /= total;
    }
    ModelParams {
        dims,
        hazard,
        omega: SwitchMatrix::row_reversed_identity(),
        pi: InitialDistribution { pi },
        var: (0..k).map(|_| random_stable_var(p, j, h, rng)).collect(),
    }
}

/// Random dataset (values only; no generative link to any model).
pub fn random_dataset(t_len: usize, dims: &Dims, rng: &mut ChaCha8Rng) -> Dataset {
    let y = Array2::from_shape_fn((t_len, dims.p), |_| {
        let e: f64 = StandardNormal.sample(rng);
        2.0 * e
    });
    let x = Array2::from_shape_fn((t_len, dims.j), |_| StandardNormal.sample(rng));
    let z = Array2::from_shape_fn((t_len, dims.l), |_| StandardNormal.sample(rng));
    Dataset::from_arrays(y, x, z).unwrap()
}
