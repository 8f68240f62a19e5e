//! Generative simulation and the parametric bootstrap.
//!
//! Simulation draws the semi-Markov chain from the hazard regressions and
//! the observations from the state-dependent VAR, discarding a burn-in so
//! the pre-sample lags look stationary. The bootstrap debiases the VAR block
//! with a relaxed refit, simulates replicas conditional on the observed
//! covariate paths, re-runs the full selection grid on each, and reports
//! percentile intervals and per-coefficient selection frequencies.

use crate::em::{grid_select, EmConfig, FitResult};
use crate::emission::{
    covariance_update, relaxed_refit, residuals, stability_check, VarParams,
};
use crate::error::{HsvarError, Result};
use crate::hidden::hazard;
use crate::model::{Dataset, ModelParams, TimeIndex};
use ndarray::{Array1, Array2};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Burn-in length used to initialize the VAR lags near stationarity.
pub const DEFAULT_BURN_IN: usize = 200;

/// Covariate paths for a simulation.
#[derive(Debug, Clone)]
pub enum CovariateSpec {
    /// User-supplied paths (the conditional bootstrap reuses observed ones).
    Given { x: Array2<f64>, z: Array2<f64> },
    /// Independent standard normal columns; `shared` reuses the same draws
    /// for the emission and hazard covariates when their counts match.
    IidNormal { shared: bool },
}

/// Everything needed to simulate one dataset from the generative model.
#[derive(Debug, Clone)]
pub struct SimConfig {
    pub truth: ModelParams,
    pub t_len: usize,
    pub seed: u64,
    pub covariates: CovariateSpec,
    pub burn_in: usize,
}

impl SimConfig {
    pub fn new(truth: ModelParams, t_len: usize, seed: u64) -> Self {
        SimConfig {
            truth,
            t_len,
            seed,
            covariates: CovariateSpec::IidNormal { shared: true },
            burn_in: DEFAULT_BURN_IN,
        }
    }
}

/// A simulated dataset together with its latent truth.
#[derive(Debug, Clone)]
pub struct SimOutput {
    pub data: Dataset,
    pub states: Vec<usize>,
    /// Dwell time at each step, uncapped.
    pub dwells: Vec<usize>,
}

fn draw_covariates(config: &SimConfig, rng: &mut ChaCha8Rng) -> Result<(Array2<f64>, Array2<f64>)> {
    let dims = config.truth.dims;
    match &config.covariates {
        CovariateSpec::Given { x, z } => {
            if x.nrows() != config.t_len || z.nrows() != config.t_len {
                return Err(HsvarError::input("covariate paths have the wrong length"));
            }
            if x.ncols() != dims.j || z.ncols() != dims.l {
                return Err(HsvarError::input("covariate paths have the wrong width"));
            }
            Ok((x.clone(), z.clone()))
        }
        CovariateSpec::IidNormal { shared } => {
            let x = Array2::from_shape_fn((config.t_len, dims.j), |_| {
                StandardNormal.sample(rng)
            });
            let z = if *shared && dims.j == dims.l {
                x.clone()
            } else {
                Array2::from_shape_fn((config.t_len, dims.l), |_| StandardNormal.sample(rng))
            };
            Ok((x, z))
        }
    }
}

/// Draws the latent state and dwell paths. The hazard is evaluated at the
/// dwell capped at m; the recorded dwell is uncapped.
pub fn simulate_chain(
    truth: &ModelParams,
    t_len: usize,
    z: &Array2<f64>,
    rng: &mut ChaCha8Rng,
) -> Result<(Vec<usize>, Vec<usize>)> {
    let k_len = truth.dims.k;
    let m = truth.dims.m;
    let mut states = Vec::with_capacity(t_len);
    let mut dwells = Vec::with_capacity(t_len);

    let mut state = sample_categorical(&truth.pi.pi, rng);
    let mut dwell = 1usize;
    states.push(state);
    dwells.push(dwell);
    for t in 1..t_len {
        if k_len > 1 {
            let q = hazard(dwell.min(m), z.row(t), state, &truth.hazard)?;
            if rng.random::<f64>() < q {
                let row: Vec<f64> = truth.omega.omega.row(state).iter().cloned().collect();
                state = sample_categorical(&row, rng);
                dwell = 1;
            } else {
                dwell += 1;
            }
        } else {
            dwell += 1;
        }
        states.push(state);
        dwells.push(dwell);
    }
    Ok((states, dwells))
}

fn sample_categorical(probs: &[f64], rng: &mut ChaCha8Rng) -> usize {
    let total: f64 = probs.iter().sum();
    let u = rng.random::<f64>() * total;
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

/// Draws observations along a given state path. Every state must be stable;
/// a burn-in run of the initial state's VAR (with the first covariate row
/// held fixed) seeds the pre-sample lags.
pub fn simulate_observations(
    truth: &ModelParams,
    states: &[usize],
    x: &Array2<f64>,
    burn_in: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Array2<f64>> {
    let dims = truth.dims;
    let report = stability_check(&truth.var);
    if let Some(bad) = report.states.iter().find(|s| !s.stable) {
        return Err(HsvarError::input(format!(
            "state {} is unstable (spectral radius {:.4}); refusing to simulate",
            bad.state, bad.spectral_radius
        )));
    }
    let t_len = states.len();
    let h = dims.h;
    let p = dims.p;

    let chols: Vec<nalgebra::DMatrix<f64>> = truth
        .var
        .iter()
        .enumerate()
        .map(|(k, v)| {
            let m = nalgebra::DMatrix::from_fn(p, p, |r, c| v.sigma[[r, c]]);
            nalgebra::Cholesky::new(m)
                .map(|c| c.unpack())
                .ok_or_else(|| {
                    HsvarError::numerical(format!(
                        "covariance of state {k} is not positive definite"
                    ))
                })
        })
        .collect::<Result<_>>()?;

    // Extended buffer: burn-in rows followed by the T sample rows.
    let total = burn_in + t_len;
    let mut buf = Array2::<f64>::zeros((total, p));
    let first_state = states[0];

    let mean_at = |buf: &Array2<f64>, row: usize, state: usize, x_row: usize| -> Array1<f64> {
        let v: &VarParams = &truth.var[state];
        let mut mean = v.intercept.clone();
        for c in 0..dims.j {
            let xv = x[[x_row, c]];
            for r in 0..p {
                mean[r] += v.exog[[r, c]] * xv;
            }
        }
        for (lag, a) in v.lags.iter().enumerate() {
            if row > lag {
                let y_lag = buf.row(row - lag - 1);
                for r in 0..p {
                    let mut acc = 0.0;
                    for c in 0..p {
                        acc += a[[r, c]] * y_lag[c];
                    }
                    mean[r] += acc;
                }
            }
        }
        mean
    };

    let mut eps = vec![0.0; p];
    for row in 0..total {
        let (state, x_row) = if row < burn_in {
            (first_state, 0)
        } else {
            (states[row - burn_in], row - burn_in)
        };
        let mean = mean_at(&buf, row, state, x_row);
        for e in eps.iter_mut() {
            *e = StandardNormal.sample(rng);
        }
        let chol = &chols[state];
        for r in 0..p {
            let mut v = mean[r];
            for c in 0..=r {
                v += chol[(r, c)] * eps[c];
            }
            buf[[row, r]] = v;
        }
    }

    let mut y = Array2::zeros((t_len, p));
    for t in 0..t_len {
        for r in 0..p {
            y[[t, r]] = buf[[burn_in + t, r]];
        }
    }
    let _ = h;
    Ok(y)
}

/// Simulates covariates, chain and observations in one deterministic pass.
pub fn simulate(config: &SimConfig) -> Result<SimOutput> {
    config.truth.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let (x, z) = draw_covariates(config, &mut rng)?;
    let (states, dwells) = simulate_chain(&config.truth, config.t_len, &z, &mut rng)?;
    let y = simulate_observations(&config.truth, &states, &x, config.burn_in, &mut rng)?;
    let data = Dataset::new(y, x, z, TimeIndex::range(config.t_len))?;
    Ok(SimOutput {
        data,
        states,
        dwells,
    })
}

/// One coefficient's bootstrap summary: the debiased point estimate, the
/// percentile interval and (for penalized VAR coefficients) the selection
/// frequency across replicas.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CoefficientSummary {
    pub block: String,
    pub state: usize,
    pub row: usize,
    pub col: usize,
    pub estimate: f64,
    pub lower: f64,
    pub upper: f64,
    pub selection: Option<f64>,
}

/// Bootstrap output: per-replica selections plus coefficient summaries over
/// the replicas whose selected K matches the reference fit.
#[derive(Debug, Clone)]
pub struct BootstrapResult {
    pub requested: usize,
    pub completed: usize,
    pub failed: usize,
    pub k_reference: usize,
    /// Selected K per completed replica, in replica order.
    pub k_selected: Vec<usize>,
    pub level: f64,
    pub debiased: ModelParams,
    pub summaries: Vec<CoefficientSummary>,
}

/// Relaxed-LASSO debiasing: refit every state's VAR on its active set
/// without penalty and recompute the covariance, keeping the hidden-process
/// parameters untouched.
pub fn debias_var(data: &Dataset, fitted: &FitResult) -> Result<ModelParams> {
    let dims = fitted.params.dims;
    let state_probs = fitted.posteriors.state_probs();
    let mut params = fitted.params.clone();
    for k in 0..dims.k {
        let weights: Vec<f64> = (0..data.n_rows()).map(|t| state_probs[[t, k]]).collect();
        let active = lasso_active_set(&fitted.params.var[k]);
        let refit = relaxed_refit(data, &dims, &weights, &active)?;
        params.var[k].intercept = refit.intercept;
        params.var[k].exog = refit.exog;
        params.var[k].lags = refit.lags;
        let resid = residuals(data, &params.var[k])?;
        params.var[k].sigma = covariance_update(&resid, &weights[dims.h..])?;
    }
    Ok(params)
}

/// Active predictor columns per outcome row in the design layout
/// (covariates first, then lag blocks).
pub fn lasso_active_set(var: &VarParams) -> Vec<Vec<usize>> {
    let p = var.intercept.len();
    let j = var.exog.ncols();
    (0..p)
        .map(|row| {
            let mut active = Vec::new();
            for c in 0..j {
                if var.exog[[row, c]] != 0.0 {
                    active.push(c);
                }
            }
            for (lag, a) in var.lags.iter().enumerate() {
                for i in 0..p {
                    if a[[row, i]] != 0.0 {
                        active.push(j + lag * p + i);
                    }
                }
            }
            active
        })
        .collect()
}

/// Linear-interpolation empirical quantile on a sorted slice.
fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let pos = q * (n - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] * (1.0 - frac) + sorted[hi] * frac
}

/// State permutation minimizing the distance between replica and reference
/// VAR intercepts.
fn align_states(reference: &ModelParams, replica: &ModelParams) -> Vec<usize> {
    let k = reference.dims.k;
    let mut best_perm: Vec<usize> = (0..k).collect();
    let mut best_cost = f64::INFINITY;
    let mut perm: Vec<usize> = (0..k).collect();
    permute(&mut perm, 0, &mut |p| {
        let mut cost = 0.0;
        for (ref_state, &rep_state) in p.iter().enumerate() {
            let a = &reference.var[ref_state].intercept;
            let b = &replica.var[rep_state].intercept;
            for i in 0..a.len() {
                cost += (a[i] - b[i]).powi(2);
            }
        }
        if cost < best_cost {
            best_cost = cost;
            best_perm = p.to_vec();
        }
    });
    best_perm
}

fn permute(items: &mut Vec<usize>, start: usize, visit: &mut impl FnMut(&[usize])) {
    if start == items.len() {
        visit(items);
        return;
    }
    for i in start..items.len() {
        items.swap(start, i);
        permute(items, start + 1, visit);
        items.swap(start, i);
    }
}

fn permuted_params(params: &ModelParams, perm: &[usize]) -> ModelParams {
    let k = params.dims.k;
    let mut out = params.clone();
    for (new_state, &old_state) in perm.iter().enumerate() {
        out.var[new_state] = params.var[old_state].clone();
        out.pi.pi[new_state] = params.pi.pi[old_state];
        out.hazard.beta0[new_state] = params.hazard.beta0[old_state];
        out.hazard.beta1[new_state] = params.hazard.beta1[old_state];
        for c in 0..params.dims.l {
            out.hazard.beta2[[new_state, c]] = params.hazard.beta2[[old_state, c]];
        }
        for (new_dest, &old_dest) in perm.iter().enumerate() {
            out.omega.omega[[new_state, new_dest]] =
                params.omega.omega[[old_state, old_dest]];
        }
    }
    let _ = k;
    out
}

/// The selection grid re-run on every bootstrap replica.
#[derive(Debug, Clone)]
pub struct BootstrapGrid {
    pub k_list: Vec<usize>,
    pub lambda0_list: Vec<f64>,
    pub seeds: Vec<u64>,
}

struct ReplicaOutcome {
    k: usize,
    /// Debiased, state-aligned estimates when K matches the reference.
    aligned: Option<(ModelParams, ModelParams)>, // (debiased, penalized)
}

/// Parametric bootstrap around a fitted model: debias, simulate B replicas
/// conditional on the observed covariates, re-run selection on each, and
/// summarize. Replica failures are tolerated up to 20% of B.
pub fn parametric_bootstrap(
    data: &Dataset,
    fitted: &FitResult,
    b: usize,
    grid: &BootstrapGrid,
    config: &EmConfig,
    base_seed: u64,
) -> Result<BootstrapResult> {
    if b == 0 {
        return Err(HsvarError::input("bootstrap needs at least one replica"));
    }
    let debiased = debias_var(data, fitted)?;
    let k_reference = fitted.params.dims.k;

    let outcomes: Vec<std::result::Result<ReplicaOutcome, String>> = (0..b)
        .into_par_iter()
        .map(|rep| {
            let sim_config = SimConfig {
                truth: debiased.clone(),
                t_len: data.n_rows(),
                seed: base_seed.wrapping_add(rep as u64),
                covariates: CovariateSpec::Given {
                    x: data.x.clone(),
                    z: data.z.clone(),
                },
                burn_in: DEFAULT_BURN_IN,
            };
            let sim = simulate(&sim_config).map_err(|e| e.to_string())?;
            let sel = grid_select(
                &sim.data,
                &grid.k_list,
                &grid.lambda0_list,
                &grid.seeds,
                config,
            )
            .map_err(|e| e.to_string())?;
            let k = sel.fit.params.dims.k;
            let aligned = if k == k_reference {
                let rep_debiased = debias_var(&sim.data, &sel.fit).map_err(|e| e.to_string())?;
                let perm = align_states(&debiased, &rep_debiased);
                Some((
                    permuted_params(&rep_debiased, &perm),
                    permuted_params(&sel.fit.params, &perm),
                ))
            } else {
                None
            };
            Ok(ReplicaOutcome { k, aligned })
        })
        .collect();

    let failed = outcomes.iter().filter(|o| o.is_err()).count();
    if failed * 5 > b {
        return Err(HsvarError::numerical(format!(
            "{failed} of {b} bootstrap replicas failed (over the 20% tolerance)"
        )));
    }
    let completed: Vec<ReplicaOutcome> = outcomes.into_iter().flatten().collect();
    let k_selected: Vec<usize> = completed.iter().map(|o| o.k).collect();

    let matched: Vec<&(ModelParams, ModelParams)> =
        completed.iter().filter_map(|o| o.aligned.as_ref()).collect();
    let summaries = summarize_coefficients(&debiased, &matched, 0.95);

    Ok(BootstrapResult {
        requested: b,
        completed: completed.len(),
        failed,
        k_reference,
        k_selected,
        level: 0.95,
        debiased,
        summaries,
    })
}

fn summarize_coefficients(
    reference: &ModelParams,
    matched: &[&(ModelParams, ModelParams)],
    level: f64,
) -> Vec<CoefficientSummary> {
    let dims = reference.dims;
    let lo_q = (1.0 - level) / 2.0;
    let hi_q = 1.0 - lo_q;
    let mut out = Vec::new();

    let mut push = |block: &str,
                    state: usize,
                    row: usize,
                    col: usize,
                    estimate: f64,
                    samples: Vec<f64>,
                    selection: Option<f64>| {
        let (lower, upper) = if samples.is_empty() {
            (estimate, estimate)
        } else {
            let mut s = samples;
            s.sort_by(|a, b| a.partial_cmp(b).unwrap());
            (quantile_sorted(&s, lo_q), quantile_sorted(&s, hi_q))
        };
        out.push(CoefficientSummary {
            block: block.to_string(),
            state,
            row,
            col,
            estimate,
            lower,
            upper,
            selection,
        });
    };

    for k in 0..dims.k {
        for r in 0..dims.p {
            push(
                "intercept",
                k,
                r,
                0,
                reference.var[k].intercept[r],
                matched.iter().map(|(d, _)| d.var[k].intercept[r]).collect(),
                None,
            );
        }
        for r in 0..dims.p {
            for c in 0..dims.j {
                let sel = selection_rate(matched, |p| p.var[k].exog[[r, c]] != 0.0);
                push(
                    "exog",
                    k,
                    r,
                    c,
                    reference.var[k].exog[[r, c]],
                    matched.iter().map(|(d, _)| d.var[k].exog[[r, c]]).collect(),
                    sel,
                );
            }
        }
        for (lag, _) in reference.var[k].lags.iter().enumerate() {
            for r in 0..dims.p {
                for c in 0..dims.p {
                    let sel = selection_rate(matched, |p| p.var[k].lags[lag][[r, c]] != 0.0);
                    push(
                        &format!("lag{}", lag + 1),
                        k,
                        r,
                        c,
                        reference.var[k].lags[lag][[r, c]],
                        matched
                            .iter()
                            .map(|(d, _)| d.var[k].lags[lag][[r, c]])
                            .collect(),
                        sel,
                    );
                }
            }
        }
        for r in 0..dims.p {
            for c in 0..=r {
                push(
                    "sigma",
                    k,
                    r,
                    c,
                    reference.var[k].sigma[[r, c]],
                    matched.iter().map(|(d, _)| d.var[k].sigma[[r, c]]).collect(),
                    None,
                );
            }
        }
        push(
            "hazard_beta0",
            k,
            0,
            0,
            reference.hazard.beta0[k],
            matched.iter().map(|(d, _)| d.hazard.beta0[k]).collect(),
            None,
        );
        push(
            "hazard_beta1",
            k,
            0,
            0,
            reference.hazard.beta1[k],
            matched.iter().map(|(d, _)| d.hazard.beta1[k]).collect(),
            None,
        );
        for c in 0..dims.l {
            push(
                "hazard_beta2",
                k,
                0,
                c,
                reference.hazard.beta2[[k, c]],
                matched
                    .iter()
                    .map(|(d, _)| d.hazard.beta2[[k, c]])
                    .collect(),
                None,
            );
        }
        push(
            "pi",
            k,
            0,
            0,
            reference.pi.pi[k],
            matched.iter().map(|(d, _)| d.pi.pi[k]).collect(),
            None,
        );
        if dims.k > 2 {
            for j in 0..dims.k {
                if j != k {
                    push(
                        "omega",
                        k,
                        0,
                        j,
                        reference.omega.omega[[k, j]],
                        matched
                            .iter()
                            .map(|(d, _)| d.omega.omega[[k, j]])
                            .collect(),
                        None,
                    );
                }
            }
        }
    }
    out
}

fn selection_rate(
    matched: &[&(ModelParams, ModelParams)],
    is_active: impl Fn(&ModelParams) -> bool,
) -> Option<f64> {
    if matched.is_empty() {
        return None;
    }
    let n = matched.len() as f64;
    let hits = matched.iter().filter(|(_, pen)| is_active(pen)).count() as f64;
    Some(hits / n)
}

/// Inverse-Wishart draw via the Bartlett decomposition: needs df > p - 1.
pub fn inverse_wishart(scale: &Array2<f64>, df: f64, rng: &mut ChaCha8Rng) -> Result<Array2<f64>> {
    let p = scale.nrows();
    if df <= p as f64 - 1.0 {
        return Err(HsvarError::input(format!(
            "inverse-Wishart needs df > p - 1 = {}",
            p - 1
        )));
    }
    let scale_na = nalgebra::DMatrix::from_fn(p, p, |r, c| scale[[r, c]]);
    let inv_scale = scale_na
        .clone()
        .try_inverse()
        .ok_or_else(|| HsvarError::input("inverse-Wishart scale is singular"))?;
    let l = nalgebra::Cholesky::new(inv_scale)
        .ok_or_else(|| HsvarError::input("inverse-Wishart scale is not positive definite"))?
        .unpack();
    let mut a = nalgebra::DMatrix::<f64>::zeros(p, p);
    for i in 0..p {
        let chi = ChiSquared::new(df - i as f64).map_err(|e| {
            HsvarError::input(format!("invalid chi-square dof in Wishart draw: {e}"))
        })?;
        a[(i, i)] = chi.sample(rng).sqrt();
        for jj in 0..i {
            a[(i, jj)] = StandardNormal.sample(rng);
        }
    }
    let la = l * a;
    let wishart = &la * la.transpose();
    let inv = wishart
        .try_inverse()
        .ok_or_else(|| HsvarError::numerical("Wishart draw not invertible"))?;
    let mut out = Array2::zeros((p, p));
    for r in 0..p {
        for c in 0..p {
            out[[r, c]] = (inv[(r, c)] + inv[(c, r)]) / 2.0;
        }
    }
    Ok(out)
}

/// Adjusted Rand index between two label sequences.
pub fn adjusted_rand_index(a: &[usize], b: &[usize]) -> f64 {
    assert_eq!(a.len(), b.len());
    let n = a.len();
    let ka = a.iter().max().map_or(0, |m| m + 1);
    let kb = b.iter().max().map_or(0, |m| m + 1);
    let mut table = vec![vec![0usize; kb]; ka];
    for i in 0..n {
        table[a[i]][b[i]] += 1;
    }
    let choose2 = |x: usize| (x * x.saturating_sub(1)) as f64 / 2.0;
    let mut sum_cells = 0.0;
    for row in &table {
        for &c in row {
            sum_cells += choose2(c);
        }
    }
    let sum_a: f64 = (0..ka)
        .map(|i| choose2(table[i].iter().sum::<usize>()))
        .sum();
    let sum_b: f64 = (0..kb)
        .map(|jj| choose2((0..ka).map(|i| table[i][jj]).sum::<usize>()))
        .sum();
    let total = choose2(n);
    let expected = sum_a * sum_b / total;
    let max_index = (sum_a + sum_b) / 2.0;
    if (max_index - expected).abs() < 1e-15 {
        return 1.0;
    }
    (sum_cells - expected) / (max_index - expected)
}
