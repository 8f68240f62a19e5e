//! Penalized EM estimation.
//!
//! The E-step runs forward-backward on the expanded chain; the M-step splits
//! into independent blocks: closed-form multinomial updates for the initial
//! distribution and the switching matrix, IRLS for the weighted Bernoulli
//! hazard regressions, and the state-adaptive L1-penalized VAR fit followed
//! by the weighted covariance update. Model choice over (K, lambda0) is
//! scored by a completed-likelihood information criterion (lower is better).

use crate::emission::{
    covariance_update, emission_loglik, residuals, weighted_lasso_fit, weighted_lasso_fit_from,
    PenaltyConfig, VarParams,
};
use crate::error::{HsvarError, Result};
use crate::hidden::{
    forward_backward, HazardParams, InitialDistribution, LinkFn, Posteriors, SwitchMatrix,
};
use crate::model::{Dataset, Dims, ModelParams};
use ndarray::Array2;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Relative-change stopping rule for the EM loop.
pub const EM_TOL: f64 = 1e-4;
/// Default EM iteration cap.
pub const EM_MAX_ITER: usize = 500;
/// Hazard coefficients are clipped to this magnitude to keep the link finite.
pub const HAZARD_COEF_CAP: f64 = 30.0;

/// Static estimation settings shared by every fit.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct EmConfig {
    /// VAR order.
    pub h: usize,
    /// Dwell truncation of the expanded chain.
    pub m: usize,
    pub link: LinkFn,
    pub max_iter: usize,
    pub tol: f64,
}

impl EmConfig {
    pub fn new(h: usize, m: usize, link: LinkFn) -> Self {
        EmConfig {
            h,
            m,
            link,
            max_iter: EM_MAX_ITER,
            tol: EM_TOL,
        }
    }
}

/// Outcome of one EM run at a fixed (K, lambda0, seed).
#[derive(Debug, Clone)]
pub struct FitResult {
    pub params: ModelParams,
    pub posteriors: Posteriors,
    /// Observed-data log-likelihood after initialization and after every
    /// M-step.
    pub loglik_trace: Vec<f64>,
    pub icl: f64,
    pub iterations: usize,
    pub converged: bool,
    pub lambda0: f64,
    pub seed: u64,
}

/// One scored cell of the (K, lambda0) selection grid.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GridCell {
    pub k: usize,
    pub lambda0: f64,
    pub seed: u64,
    pub icl: f64,
    pub loglik: f64,
    pub iterations: usize,
    pub converged: bool,
    pub error: Option<String>,
}

/// Grid search over states and baseline penalties, best seed per cell.
#[derive(Debug)]
pub struct GridSelection {
    pub cells: Vec<GridCell>,
    /// Index of the selected cell in `cells`.
    pub selected: usize,
    pub fit: FitResult,
}

/// Deterministic initialization. Even seeds cut the usable time range into
/// K contiguous blocks with seed-jittered boundaries; odd seeds split the
/// rows into K quantile groups along a seeded random projection of the
/// outcomes, which separates short-dwell regimes that time blocks would
/// average away. Block-to-state assignment is a seeded permutation and each
/// state starts from an unpenalized VAR fit on its rows. The hazard
/// intercept targets a mean dwell of T/(4K); switching starts uniform and
/// pi flat.
pub fn initialize(data: &Dataset, k: usize, seed: u64, config: &EmConfig) -> Result<ModelParams> {
    let t_len = data.n_rows();
    let dims = Dims {
        k,
        p: data.n_outcomes(),
        h: config.h,
        j: data.n_emission_covariates(),
        l: data.n_hazard_covariates(),
        m: config.m,
    };
    dims.validate()?;
    if t_len <= config.h + k {
        return Err(HsvarError::input(format!(
            "series of length {t_len} is too short for H = {} and K = {k}",
            config.h
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let usable = t_len - config.h;

    // Usable-row indices grouped into K blocks.
    let groups: Vec<Vec<usize>> = if seed % 2 == 0 || k == 1 {
        // Contiguous time blocks with a bounded boundary jitter.
        let mut edges = vec![0usize; k + 1];
        edges[k] = usable;
        for b in 1..k {
            let base = b * usable / k;
            let span = (usable / (4 * k)).max(1) as i64;
            let jitter = rng.random_range(-span..=span);
            edges[b] = (base as i64 + jitter).clamp(1, usable as i64 - 1) as usize;
        }
        edges.sort_unstable();
        (0..k).map(|b| (edges[b]..edges[b + 1]).collect()).collect()
    } else {
        // Quantile groups along a random unit projection of the outcomes.
        let mut w: Vec<f64> = (0..dims.p).map(|_| rng.random::<f64>() - 0.5).collect();
        let norm: f64 = w.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
        for v in w.iter_mut() {
            *v /= norm;
        }
        let mut order: Vec<usize> = (0..usable).collect();
        let score = |u: usize| -> f64 {
            let row = data.y.row(config.h + u);
            row.iter().zip(w.iter()).map(|(y, wv)| y * wv).sum()
        };
        order.sort_by(|&a, &b| {
            score(a)
                .partial_cmp(&score(b))
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(a.cmp(&b))
        });
        (0..k)
            .map(|b| order[b * usable / k..(b + 1) * usable / k].to_vec())
            .collect()
    };
    let mut assignment: Vec<usize> = (0..k).collect();
    assignment.shuffle(&mut rng);

    let mut var = vec![VarParams::zeros(dims.p, dims.j, dims.h); k];
    for (block, rows) in groups.iter().enumerate() {
        let state = assignment[block];
        let mut weights = vec![0.0; t_len];
        for &u in rows {
            weights[config.h + u] = 1.0;
        }
        if weights.iter().sum::<f64>() < 1.0 {
            return Err(HsvarError::input(format!(
                "initial block {block} is empty; series too short for K = {k}"
            )));
        }
        let fit = weighted_lasso_fit(data, &dims, &weights, 0.0)?;
        let mut params = VarParams {
            intercept: fit.intercept,
            exog: fit.exog,
            lags: fit.lags,
            sigma: Array2::eye(dims.p),
        };
        let resid = residuals(data, &params)?;
        params.sigma = covariance_update(&resid, &weights[config.h..])?;
        var[state] = params;
    }

    let q_target = (4.0 * k as f64 / t_len as f64).clamp(1e-4, 0.9);
    let mut hazard = HazardParams::zeros(k, dims.l, config.link);
    for s in 0..k {
        hazard.beta0[s] = config.link.apply(q_target);
    }

    let omega = if k == 2 {
        SwitchMatrix::row_reversed_identity()
    } else {
        SwitchMatrix::uniform(k)
    };

    Ok(ModelParams {
        dims,
        hazard,
        omega,
        pi: InitialDistribution::uniform(k),
        var,
    })
}

/// E-step: emission log-likelihoods plus forward-backward smoothing.
pub fn e_step(data: &Dataset, params: &ModelParams) -> Result<Posteriors> {
    let ell = emission_loglik(data, params)?;
    forward_backward(data, params, &ell)
}

/// M-step: closed-form pi and omega, IRLS hazards, penalized VAR blocks.
/// Degenerate blocks (a state with no switch mass, or a Bernoulli block with
/// no events) keep their previous values.
pub fn m_step(
    data: &Dataset,
    posteriors: &Posteriors,
    lambda0: f64,
    prev: &ModelParams,
) -> Result<ModelParams> {
    let dims = prev.dims;
    let k_len = dims.k;
    let t_len = data.n_rows();
    let penalty = PenaltyConfig::new(lambda0)?;
    let state_probs = posteriors.state_probs();

    // pi: the smoothed distribution at t = 1.
    let mut pi = vec![0.0; k_len];
    for k in 0..k_len {
        pi[k] = state_probs[[0, k]];
    }
    let s: f64 = pi.iter().sum();
    for v in pi.iter_mut() {
        *v /= s;
    }

    // omega: share of switch mass by destination; fixed for K <= 2.
    let omega = if k_len == 2 {
        SwitchMatrix::row_reversed_identity()
    } else if k_len == 1 {
        SwitchMatrix {
            omega: Array2::zeros((1, 1)),
        }
    } else {
        let mut omega = prev.omega.omega.clone();
        for k in 0..k_len {
            let mut row = vec![0.0; k_len];
            let mut tot = 0.0;
            for j in 0..k_len {
                if j != k {
                    let mass: f64 = (1..t_len).map(|t| posteriors.switch[[t, k, j]]).sum();
                    row[j] = mass;
                    tot += mass;
                }
            }
            if tot > 1e-12 {
                for j in 0..k_len {
                    omega[[k, j]] = if j == k { 0.0 } else { row[j] / tot };
                }
            }
            // No observed switch mass: keep the previous row.
        }
        SwitchMatrix { omega }
    };

    // Hazard regressions: one weighted Bernoulli GLM per state.
    let mut hazard = prev.hazard.clone();
    if k_len > 1 {
        for k in 0..k_len {
            let warm = irls_state_coefs(&prev.hazard, k, dims.l);
            match irls_hazard(data, posteriors, k, dims.m, prev.hazard.link, &warm) {
                Ok(Some(beta)) => {
                    hazard.beta0[k] = beta[0];
                    hazard.beta1[k] = beta[1];
                    for c in 0..dims.l {
                        hazard.beta2[[k, c]] = beta[2 + c];
                    }
                }
                Ok(None) => {} // no events: keep previous coefficients
                Err(e) => return Err(e),
            }
        }
    }

    // VAR blocks with state-adaptive penalty.
    let min_ess = dims.p as f64 + 1.0;
    let mut var = Vec::with_capacity(k_len);
    for k in 0..k_len {
        let weights: Vec<f64> = (0..t_len).map(|t| state_probs[[t, k]]).collect();
        let ess: f64 = weights[dims.h..].iter().sum();
        if ess < min_ess {
            return Err(HsvarError::DegenerateState {
                state: k,
                ess,
                min: min_ess,
            });
        }
        let lambda_k = penalty.state_lambda(ess);
        let fit = weighted_lasso_fit_from(data, &dims, &weights, lambda_k, Some(&prev.var[k]))?;
        let mut params = VarParams {
            intercept: fit.intercept,
            exog: fit.exog,
            lags: fit.lags,
            sigma: Array2::eye(dims.p),
        };
        let resid = residuals(data, &params)?;
        params.sigma = covariance_update(&resid, &weights[dims.h..])?;
        var.push(params);
    }

    Ok(ModelParams {
        dims,
        hazard,
        omega,
        pi: InitialDistribution { pi },
        var,
    })
}

fn irls_state_coefs(hazard: &HazardParams, k: usize, l: usize) -> Vec<f64> {
    let mut coefs = vec![hazard.beta0[k], hazard.beta1[k]];
    for c in 0..l {
        coefs.push(hazard.beta2[[k, c]]);
    }
    coefs
}

/// Row-major Bernoulli design for one state's dwell regression: columns are
/// (intercept, dwell, hazard covariates), one row per (t, d) cell with mass.
struct HazardDesign {
    dim: usize,
    design: Vec<f64>,
    leave: Vec<f64>,
    stay: Vec<f64>,
}

impl HazardDesign {
    fn n_rows(&self) -> usize {
        self.leave.len()
    }

    fn row(&self, r: usize) -> &[f64] {
        &self.design[r * self.dim..(r + 1) * self.dim]
    }
}

/// Weighted Bernoulli deviance of the dwell regression for one state.
fn hazard_deviance(rows: &HazardDesign, beta: &[f64], link: LinkFn) -> f64 {
    let mut dev = 0.0;
    for r in 0..rows.n_rows() {
        let eta = rows
            .row(r)
            .iter()
            .zip(beta.iter())
            .map(|(x, b)| x * b)
            .sum();
        let q = link
            .inverse(eta)
            .clamp(crate::hidden::HAZARD_EPS, 1.0 - crate::hidden::HAZARD_EPS);
        let leave = rows.leave[r];
        let stay = rows.stay[r];
        if leave > 0.0 {
            dev -= 2.0 * leave * q.ln();
        }
        if stay > 0.0 {
            dev -= 2.0 * stay * (1.0 - q).ln();
        }
    }
    dev
}

/// Gradient of the weighted Bernoulli log-likelihood.
fn hazard_score(rows: &HazardDesign, beta: &[f64], link: LinkFn) -> Vec<f64> {
    let dim = beta.len();
    let mut score = vec![0.0; dim];
    for r in 0..rows.n_rows() {
        let row = rows.row(r);
        let eta: f64 = row.iter().zip(beta.iter()).map(|(x, b)| x * b).sum();
        let (q, deriv) = link.inverse_and_deriv(eta);
        let deriv = deriv.max(1e-10);
        let n = rows.leave[r] + rows.stay[r];
        let y = rows.leave[r] / n;
        let g = n * (y - q) * deriv / (q * (1.0 - q));
        for (s, x) in score.iter_mut().zip(row.iter()) {
            *s += g * x;
        }
    }
    score
}

/// Gradient components pointing out of the coefficient box are projected
/// away; a small projected gradient means a (possibly constrained)
/// stationary point.
fn projected_score(score: &[f64], beta: &[f64]) -> Vec<f64> {
    score
        .iter()
        .zip(beta.iter())
        .map(|(&g, &b)| {
            if (b >= HAZARD_COEF_CAP && g > 0.0) || (b <= -HAZARD_COEF_CAP && g < 0.0) {
                0.0
            } else {
                g
            }
        })
        .collect()
}

/// IRLS for the weighted Bernoulli block of one state. Returns None when the
/// state has no transition mass at all. Step halving (up to 20) guards
/// against deviance increases; persistent increases are a numerical error.
fn irls_hazard(
    data: &Dataset,
    posteriors: &Posteriors,
    state: usize,
    m: usize,
    link: LinkFn,
    warm: &[f64],
) -> Result<Option<Vec<f64>>> {
    let t_len = data.n_rows();
    let l = data.n_hazard_covariates();
    // With m = 1 the dwell column is the constant 1 and aliases the
    // intercept; drop it and pin beta1 at zero.
    let use_dwell = m > 1;
    let dim = if use_dwell { 2 + l } else { 1 + l };

    let mut rows = HazardDesign {
        dim,
        design: Vec::with_capacity((t_len - 1) * m * dim),
        leave: Vec::with_capacity((t_len - 1) * m),
        stay: Vec::with_capacity((t_len - 1) * m),
    };
    let mut total = 0.0;
    for t in 1..t_len {
        for d in 1..=m {
            let leave = posteriors.leave[[t, state, d - 1]];
            let stay = posteriors.stay[[t, state, d - 1]];
            let n = leave + stay;
            if n <= 1e-14 {
                continue;
            }
            rows.design.push(1.0);
            if use_dwell {
                rows.design.push(d as f64);
            }
            for c in 0..l {
                rows.design.push(data.z[[t, c]]);
            }
            rows.leave.push(leave);
            rows.stay.push(stay);
            total += n;
        }
    }
    if total <= 1e-10 {
        return Ok(None);
    }

    let mut beta: Vec<f64> = if use_dwell {
        warm.to_vec()
    } else {
        let mut b = vec![warm[0]];
        b.extend_from_slice(&warm[2..]);
        b
    };
    let mut dev = hazard_deviance(&rows, &beta, link);

    // Accepts a candidate when the deviance does not increase; returns the
    // max coefficient move and achieved improvement.
    let try_direction = |beta: &mut Vec<f64>,
                             dev: &mut f64,
                             direction: &[f64],
                             halvings: usize|
     -> Option<(f64, f64)> {
        let mut step = 1.0;
        for _ in 0..=halvings {
            let candidate: Vec<f64> = beta
                .iter()
                .zip(direction.iter())
                .map(|(old, d)| (old + step * d).clamp(-HAZARD_COEF_CAP, HAZARD_COEF_CAP))
                .collect();
            let cand_dev = hazard_deviance(&rows, &candidate, link);
            if cand_dev.is_finite() && cand_dev <= *dev + 1e-10 {
                let delta = candidate
                    .iter()
                    .zip(beta.iter())
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0f64, f64::max);
                let improved = *dev - cand_dev;
                *beta = candidate;
                *dev = cand_dev;
                return Some((delta, improved));
            }
            step *= 0.5;
        }
        None
    };

    for _iter in 0..50 {
        let mut xtwx = nalgebra::DMatrix::<f64>::zeros(dim, dim);
        let mut xtwz = nalgebra::DVector::<f64>::zeros(dim);
        for r in 0..rows.n_rows() {
            let row = rows.row(r);
            let eta: f64 = row.iter().zip(beta.iter()).map(|(x, b)| x * b).sum();
            let (q, deriv) = link.inverse_and_deriv(eta);
            let deriv = deriv.max(1e-10);
            let n = rows.leave[r] + rows.stay[r];
            let y = rows.leave[r] / n;
            let w = n * deriv * deriv / (q * (1.0 - q));
            let z = eta + ((y - q) / deriv).clamp(-1e8, 1e8);
            for a in 0..dim {
                xtwz[a] += w * row[a] * z;
                for b in 0..=a {
                    xtwx[(a, b)] += w * row[a] * row[b];
                }
            }
        }
        for a in 0..dim {
            for b in a + 1..dim {
                xtwx[(a, b)] = xtwx[(b, a)];
            }
        }
        // Escalating ridge fallback keeps near-collinear systems solvable.
        let mut proposal = nalgebra::Cholesky::new(xtwx.clone()).map(|c| c.solve(&xtwz));
        if proposal.is_none() {
            let trace: f64 = (0..dim).map(|a| xtwx[(a, a)]).sum();
            for ridge in [1e-10, 1e-8, 1e-6] {
                let mut regularized = xtwx.clone();
                for a in 0..dim {
                    regularized[(a, a)] += ridge * (trace / dim as f64).max(1.0);
                }
                proposal = nalgebra::Cholesky::new(regularized).map(|c| c.solve(&xtwz));
                if proposal.is_some() {
                    break;
                }
            }
        }
        let proposal = proposal.ok_or_else(|| {
            HsvarError::numerical(format!(
                "singular IRLS system in hazard regression of state {state}"
            ))
        })?;
        let direction: Vec<f64> = proposal
            .iter()
            .zip(beta.iter())
            .map(|(new, old)| new.clamp(-HAZARD_COEF_CAP, HAZARD_COEF_CAP) - old)
            .collect();

        // Fisher-scoring step with halving on deviance increase.
        if let Some((delta, improved)) = try_direction(&mut beta, &mut dev, &direction, 20) {
            if delta < 1e-10 || improved < 1e-12 {
                return Ok(Some(expand_beta(beta, use_dwell)));
            }
            continue;
        }

        // The scoring direction stalled. At a (possibly clipped) stationary
        // point that is convergence, otherwise fall back to a safeguarded
        // gradient step before declaring divergence.
        let score = hazard_score(&rows, &beta, link);
        let projected = projected_score(&score, &beta);
        let gnorm = projected.iter().fold(0.0f64, |m, g| m.max(g.abs()));
        if gnorm <= 1e-6 * (1.0 + total) {
            return Ok(Some(expand_beta(beta, use_dwell)));
        }
        let gradient_dir: Vec<f64> = projected.iter().map(|g| g / gnorm).collect();
        if try_direction(&mut beta, &mut dev, &gradient_dir, 40).is_none() {
            return Err(HsvarError::numerical(format!(
                "IRLS for hazard regression of state {state} diverged \
                 (no descent along scoring or gradient directions)"
            )));
        }
    }
    Ok(Some(expand_beta(beta, use_dwell)))
}

/// Restores the (beta0, beta1, beta2...) layout when the dwell column was
/// dropped for m = 1.
fn expand_beta(beta: Vec<f64>, use_dwell: bool) -> Vec<f64> {
    if use_dwell {
        beta
    } else {
        let mut full = vec![beta[0], 0.0];
        full.extend_from_slice(&beta[1..]);
        full
    }
}

/// Flattened parameter vector in a fixed order, for relative-change tests.
fn flatten_params(params: &ModelParams) -> Vec<f64> {
    let mut v = Vec::new();
    v.extend_from_slice(&params.pi.pi);
    v.extend(params.omega.omega.iter());
    v.extend_from_slice(&params.hazard.beta0);
    v.extend_from_slice(&params.hazard.beta1);
    v.extend(params.hazard.beta2.iter());
    for var in &params.var {
        v.extend(var.intercept.iter());
        v.extend(var.exog.iter());
        for a in &var.lags {
            v.extend(a.iter());
        }
        v.extend(var.sigma.iter());
    }
    v
}

fn max_rel_change(old: &ModelParams, new: &ModelParams) -> f64 {
    flatten_params(old)
        .iter()
        .zip(flatten_params(new).iter())
        .map(|(o, n)| {
            // Coefficients parked at (numerical) zero may flip in and out of
            // the penalized support by ~1e-6 forever; they carry no signal
            // for convergence.
            if o.abs() < 1e-5 && n.abs() < 1e-5 {
                0.0
            } else {
                (n - o).abs() / (o.abs() + 1e-8)
            }
        })
        .fold(0.0, f64::max)
}

/// Full EM run at fixed (K, lambda0, seed). Non-convergence within
/// `max_iter` is flagged on the result, not an error.
pub fn fit(
    data: &Dataset,
    k: usize,
    lambda0: f64,
    seed: u64,
    config: &EmConfig,
) -> Result<FitResult> {
    let mut params = initialize(data, k, seed, config)?;
    let mut posteriors = e_step(data, &params)?;
    let mut trace = vec![posteriors.loglik];
    let mut converged = false;
    let mut iterations = 0;

    for it in 1..=config.max_iter {
        let updated = m_step(data, &posteriors, lambda0, &params)?;
        let rel = max_rel_change(&params, &updated);
        params = updated;
        posteriors = e_step(data, &params)?;
        trace.push(posteriors.loglik);
        iterations = it;
        if rel < config.tol {
            converged = true;
            break;
        }
    }

    let icl = icl_score(&params, &posteriors, data.n_rows());
    Ok(FitResult {
        params,
        posteriors,
        loglik_trace: trace,
        icl,
        iterations,
        converged,
        lambda0,
        seed,
    })
}

/// Completed-likelihood information criterion, lower is better:
/// `-2 (loglik + sum_t log uni[t, MAP super-state]) + df log(T - H)`.
/// The degrees of freedom count nonzero VAR coefficients, p(p+1)/2
/// covariance entries per state, the hazard coefficients, the free switching
/// entries and K - 1 initial probabilities.
pub fn icl_score(params: &ModelParams, posteriors: &Posteriors, t_len: usize) -> f64 {
    let dims = params.dims;
    let (rows, k_len, m_len) = posteriors.uni.dim();
    debug_assert_eq!(rows, t_len);

    let mut completed = posteriors.loglik;
    for t in 0..rows {
        let mut best = f64::MIN;
        for k in 0..k_len {
            for d in 0..m_len {
                best = best.max(posteriors.uni[[t, k, d]]);
            }
        }
        completed += best.ln();
    }

    let df = param_count(params) as f64;
    let t_eff = (t_len - dims.h) as f64;
    -2.0 * completed + df * t_eff.ln()
}

/// Degrees of freedom: nonzero VAR coefficients plus the structural blocks.
pub fn param_count(params: &ModelParams) -> usize {
    let dims = params.dims;
    let mut df = 0usize;
    for var in &params.var {
        df += var.intercept.iter().filter(|&&v| v != 0.0).count();
        df += var.exog.iter().filter(|&&v| v != 0.0).count();
        for a in &var.lags {
            df += a.iter().filter(|&&v| v != 0.0).count();
        }
        df += dims.p * (dims.p + 1) / 2;
    }
    if dims.k > 1 {
        df += dims.k * (2 + dims.l);
    }
    if dims.k > 2 {
        df += dims.k * (dims.k - 2);
    }
    df + (dims.k - 1)
}

struct CellFit {
    cell: GridCell,
    params: Option<ModelParams>,
    loglik_trace: Vec<f64>,
}

/// Fits every (K, lambda0) cell, keeping the best seed per cell by ICL, and
/// selects the converged cell with minimal ICL. Cells are independent and
/// evaluated in parallel; results are deterministic for fixed seeds.
pub fn grid_select(
    data: &Dataset,
    k_list: &[usize],
    lambda0_list: &[f64],
    seeds: &[u64],
    config: &EmConfig,
) -> Result<GridSelection> {
    if k_list.is_empty() || lambda0_list.is_empty() || seeds.is_empty() {
        return Err(HsvarError::input("selection grids must be non-empty"));
    }
    let mut grid = Vec::new();
    for &k in k_list {
        for &lambda0 in lambda0_list {
            grid.push((k, lambda0));
        }
    }

    let cells: Vec<CellFit> = grid
        .par_iter()
        .map(|&(k, lambda0)| {
            let mut best: Option<CellFit> = None;
            let mut last_err: Option<String> = None;
            for &seed in seeds {
                match fit(data, k, lambda0, seed, config) {
                    Ok(res) => {
                        let better = match &best {
                            None => true,
                            Some(b) => {
                                // Prefer converged fits, then lower ICL.
                                (res.converged, -res.icl) > (b.cell.converged, -b.cell.icl)
                            }
                        };
                        if better {
                            best = Some(CellFit {
                                cell: GridCell {
                                    k,
                                    lambda0,
                                    seed,
                                    icl: res.icl,
                                    loglik: res.posteriors.loglik,
                                    iterations: res.iterations,
                                    converged: res.converged,
                                    error: None,
                                },
                                params: Some(res.params),
                                loglik_trace: res.loglik_trace,
                            });
                        }
                    }
                    Err(e) => last_err = Some(e.to_string()),
                }
            }
            best.unwrap_or(CellFit {
                cell: GridCell {
                    k,
                    lambda0,
                    seed: seeds[0],
                    icl: f64::INFINITY,
                    loglik: f64::NEG_INFINITY,
                    iterations: 0,
                    converged: false,
                    error: Some(last_err.unwrap_or_else(|| "fit failed".into())),
                },
                params: None,
                loglik_trace: Vec::new(),
            })
        })
        .collect();

    // Selection: minimal ICL among converged cells; fall back to any
    // successful cell when none converged.
    let mut selected: Option<usize> = None;
    for (idx, c) in cells.iter().enumerate() {
        if c.params.is_none() {
            continue;
        }
        let candidate_ok = c.cell.converged;
        let better = match selected {
            None => true,
            Some(cur) => {
                let cur_cell = &cells[cur].cell;
                (candidate_ok, -c.cell.icl) > (cur_cell.converged, -cur_cell.icl)
            }
        };
        if better {
            selected = Some(idx);
        }
    }
    let selected = selected.ok_or_else(|| {
        HsvarError::numerical("every cell of the selection grid failed to fit")
    })?;

    let sel = &cells[selected];
    let params = sel.params.clone().expect("selected cell has parameters");
    let posteriors = e_step(data, &params)?;
    let fit = FitResult {
        icl: sel.cell.icl,
        iterations: sel.cell.iterations,
        converged: sel.cell.converged,
        lambda0: sel.cell.lambda0,
        seed: sel.cell.seed,
        loglik_trace: sel.loglik_trace.clone(),
        params,
        posteriors,
    };
    Ok(GridSelection {
        cells: cells.into_iter().map(|c| c.cell).collect(),
        selected,
        fit,
    })
}

/// `count` values whose logs are equally spaced between `log(lo)` and
/// `log(hi)`.
pub fn log_spaced(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    if count == 1 {
        return vec![lo];
    }
    let (llo, lhi) = (lo.ln(), hi.ln());
    (0..count)
        .map(|i| (llo + (lhi - llo) * i as f64 / (count - 1) as f64).exp())
        .collect()
}

/// Default baseline-penalty grid: zero followed by 20 log-spaced values.
pub fn default_lambda_grid() -> Vec<f64> {
    let mut grid = vec![0.0];
    grid.extend(log_spaced(1e-4, 0.05, 20));
    grid
}
