//! State-dependent Gaussian VAR(H) emissions.
//!
//! Each state k has conditional mean
//! `b0_k + B_k x_t + sum_h A_hk y_{t-h}` and covariance `Sigma_k`. The
//! weighted M-step solves one penalized least-squares problem per outcome
//! row,
//!
//! ```text
//! min  e' W e  +  lambda_k * ||(a, b)||_1
//! ```
//!
//! by cyclic coordinate descent with soft thresholding. Predictors are
//! standardized to weighted mean 0 / variance 1 inside the solve and the
//! coefficients are mapped back afterwards; the intercept is never
//! penalized. A relaxed (active-set, unpenalized) refit is available for
//! debiasing before the bootstrap.

use crate::error::{HsvarError, Result};
use crate::model::{Dataset, Dims, ModelParams};
use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

const LN_2PI: f64 = 1.8378770664093453;

/// Coordinate-descent stopping rule: max coefficient change per sweep.
/// Kept two orders below the 1e-8 solution-accuracy contract because the
/// per-sweep change understates the remaining distance to the optimum on
/// correlated designs.
pub const CD_TOL: f64 = 1e-10;
/// Coordinate-descent sweep cap.
pub const CD_MAX_SWEEPS: usize = 10_000;
/// Covariance matrices are floored at this smallest eigenvalue.
pub const SIGMA_EIG_FLOOR: f64 = 1e-8;

/// VAR parameter block of one state.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VarParams {
    /// Length-p intercept.
    pub intercept: Array1<f64>,
    /// p x J emission-covariate coefficients.
    pub exog: Array2<f64>,
    /// H lag matrices, each p x p.
    pub lags: Vec<Array2<f64>>,
    /// p x p innovation covariance.
    pub sigma: Array2<f64>,
}

impl VarParams {
    /// Zero coefficients with unit covariance.
    pub fn zeros(p: usize, j: usize, h: usize) -> Self {
        VarParams {
            intercept: Array1::zeros(p),
            exog: Array2::zeros((p, j)),
            lags: (0..h).map(|_| Array2::zeros((p, p))).collect(),
            sigma: Array2::eye(p),
        }
    }

    pub fn validate(&self, p: usize, j: usize, h: usize) -> Result<()> {
        if self.intercept.len() != p {
            return Err(HsvarError::input(format!(
                "intercept has length {}, expected {p}",
                self.intercept.len()
            )));
        }
        if self.exog.dim() != (p, j) {
            return Err(HsvarError::input(format!(
                "covariate coefficients are {:?}, expected ({p}, {j})",
                self.exog.dim()
            )));
        }
        if self.lags.len() != h || self.lags.iter().any(|a| a.dim() != (p, p)) {
            return Err(HsvarError::input(format!(
                "expected {h} lag matrices of size {p}x{p}"
            )));
        }
        if self.sigma.dim() != (p, p) {
            return Err(HsvarError::input("covariance has wrong shape"));
        }
        for a in 0..p {
            for b in 0..a {
                if (self.sigma[[a, b]] - self.sigma[[b, a]]).abs() > 1e-12 {
                    return Err(HsvarError::input("covariance is not symmetric"));
                }
            }
        }
        if cholesky(&self.sigma).is_none() {
            return Err(HsvarError::input("covariance is not positive definite"));
        }
        Ok(())
    }

    /// Stationary mean of the state's VAR net of covariate effects:
    /// `(I - sum_h A_h)^{-1} b0`. Fails when the lag polynomial has a unit root.
    pub fn marginal_mean(&self) -> Result<Array1<f64>> {
        let p = self.intercept.len();
        let mut m = nalgebra::DMatrix::<f64>::identity(p, p);
        for a in &self.lags {
            for r in 0..p {
                for c in 0..p {
                    m[(r, c)] -= a[[r, c]];
                }
            }
        }
        let b = nalgebra::DVector::from_iterator(p, self.intercept.iter().cloned());
        let sol = m
            .lu()
            .solve(&b)
            .ok_or_else(|| HsvarError::numerical("singular I - sum(A_h) in marginal mean"))?;
        Ok(Array1::from_iter(sol.iter().cloned()))
    }
}

/// Baseline L1 penalty; the state-specific penalty grows with the square
/// root of the state's effective sample size.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct PenaltyConfig {
    pub lambda0: f64,
}

impl PenaltyConfig {
    pub fn new(lambda0: f64) -> Result<Self> {
        if lambda0 < 0.0 || !lambda0.is_finite() {
            return Err(HsvarError::input("lambda0 must be finite and >= 0"));
        }
        Ok(PenaltyConfig { lambda0 })
    }

    /// Effective penalty for a state with effective sample size `ess`.
    pub fn state_lambda(&self, ess: f64) -> f64 {
        self.lambda0 * ess.sqrt()
    }
}

/// Companion-matrix stability of each state's lag polynomial.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StabilityReport {
    pub states: Vec<StateStability>,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct StateStability {
    pub state: usize,
    pub spectral_radius: f64,
    pub stable: bool,
}

impl StabilityReport {
    pub fn all_stable(&self) -> bool {
        self.states.iter().all(|s| s.stable)
    }
}

/// Spectral radius of the (p*H) x (p*H) companion matrix of each state.
pub fn stability_check(var: &[VarParams]) -> StabilityReport {
    let states = var
        .iter()
        .enumerate()
        .map(|(k, v)| {
            let radius = companion_spectral_radius(&v.lags);
            StateStability {
                state: k,
                spectral_radius: radius,
                stable: radius < 1.0,
            }
        })
        .collect();
    StabilityReport { states }
}

fn companion_spectral_radius(lags: &[Array2<f64>]) -> f64 {
    let h = lags.len();
    if h == 0 || lags.iter().all(|a| a.iter().all(|&v| v == 0.0)) {
        // The companion matrix is nilpotent; all eigenvalues are exactly 0.
        return 0.0;
    }
    let p = lags[0].nrows();
    let n = p * h;
    let mut companion = nalgebra::DMatrix::<f64>::zeros(n, n);
    for (block, a) in lags.iter().enumerate() {
        for r in 0..p {
            for c in 0..p {
                companion[(r, block * p + c)] = a[[r, c]];
            }
        }
    }
    for r in p..n {
        companion[(r, r - p)] = 1.0;
    }
    companion
        .complex_eigenvalues()
        .iter()
        .map(|e| e.norm())
        .fold(0.0, f64::max)
}

/// Conditional mean of `y_t` under state k: `b0 + B x_t + sum_h A_h y_{t-h}`.
/// Requires `t >= H` so all lags exist.
pub fn conditional_mean(
    t: usize,
    data: &Dataset,
    params: &VarParams,
) -> Result<Array1<f64>> {
    let h = params.lags.len();
    if t < h {
        return Err(HsvarError::input(format!(
            "conditional mean needs t >= {h}, got {t}"
        )));
    }
    let p = params.intercept.len();
    let mut mean = params.intercept.clone();
    if params.exog.ncols() > 0 {
        let x_t = data.x.row(t);
        for r in 0..p {
            let mut acc = 0.0;
            for (c, xv) in x_t.iter().enumerate() {
                acc += params.exog[[r, c]] * xv;
            }
            mean[r] += acc;
        }
    }
    for (lag, a) in params.lags.iter().enumerate() {
        let y_lag = data.y.row(t - lag - 1);
        for r in 0..p {
            let mut acc = 0.0;
            for (c, yv) in y_lag.iter().enumerate() {
                acc += a[[r, c]] * yv;
            }
            mean[r] += acc;
        }
    }
    Ok(mean)
}

/// Lower Cholesky factor, or None when the matrix is not positive definite.
fn cholesky(sigma: &Array2<f64>) -> Option<nalgebra::DMatrix<f64>> {
    let p = sigma.nrows();
    let m = nalgebra::DMatrix::from_fn(p, p, |r, c| sigma[[r, c]]);
    nalgebra::Cholesky::new(m).map(|c| c.unpack())
}

/// T x K matrix of state-conditional Gaussian log-densities. The first H
/// rows only condition the VAR and are exactly zero.
pub fn emission_loglik(data: &Dataset, params: &ModelParams) -> Result<Array2<f64>> {
    let t_len = data.n_rows();
    let k_len = params.dims.k;
    let h = params.dims.h;
    let p = params.dims.p;
    let mut out = Array2::zeros((t_len, k_len));

    // Per-state Cholesky factors and log-determinants.
    let mut factors = Vec::with_capacity(k_len);
    for (k, v) in params.var.iter().enumerate() {
        let chol = cholesky(&v.sigma).ok_or_else(|| {
            HsvarError::numerical(format!("covariance of state {k} is not positive definite"))
        })?;
        let logdet: f64 = (0..p).map(|i| chol[(i, i)].ln()).sum::<f64>() * 2.0;
        factors.push((chol, logdet));
    }

    let mut resid = nalgebra::DVector::<f64>::zeros(p);
    for t in h..t_len {
        for k in 0..k_len {
            let mean = conditional_mean(t, data, &params.var[k])?;
            for r in 0..p {
                resid[r] = data.y[[t, r]] - mean[r];
            }
            let (chol, logdet) = &factors[k];
            // Solve L u = resid; the quadratic form is |u|^2.
            let u = chol.solve_lower_triangular(&resid).ok_or_else(|| {
                HsvarError::numerical(format!("triangular solve failed for state {k}"))
            })?;
            let quad: f64 = u.iter().map(|v| v * v).sum();
            out[[t, k]] = -0.5 * (p as f64 * LN_2PI + logdet + quad);
        }
    }
    Ok(out)
}

/// Predictor layout shared by the penalized and relaxed fits: the J
/// covariates first, then lag 1..H blocks of p columns each.
pub(crate) struct DesignMatrix {
    /// Column-major predictors, each of length T - H.
    pub cols: Vec<Vec<f64>>,
    /// Responses per outcome row, each of length T - H.
    pub responses: Vec<Vec<f64>>,
    /// Weights for rows H..T.
    pub weights: Vec<f64>,
}

pub(crate) fn build_design(data: &Dataset, dims: &Dims, weights: &[f64]) -> Result<DesignMatrix> {
    let t_len = data.n_rows();
    let h = dims.h;
    if weights.len() != t_len {
        return Err(HsvarError::input(format!(
            "weights have length {}, expected {}",
            weights.len(),
            t_len
        )));
    }
    if weights.iter().any(|&w| !(0.0..=1.0 + 1e-12).contains(&w)) {
        return Err(HsvarError::input("weights must lie in [0, 1]"));
    }
    if t_len <= h {
        return Err(HsvarError::input("series shorter than the VAR order"));
    }
    let n = t_len - h;
    let q = dims.n_predictors();
    let mut cols = vec![vec![0.0; n]; q];
    for (row, t) in (h..t_len).enumerate() {
        for c in 0..dims.j {
            cols[c][row] = data.x[[t, c]];
        }
        for lag in 1..=h {
            for i in 0..dims.p {
                cols[dims.j + (lag - 1) * dims.p + i][row] = data.y[[t - lag, i]];
            }
        }
    }
    let responses = (0..dims.p)
        .map(|j| (h..t_len).map(|t| data.y[[t, j]]).collect())
        .collect();
    Ok(DesignMatrix {
        cols,
        responses,
        weights: weights[h..].to_vec(),
    })
}

/// Result of one penalized (or relaxed) weighted fit for a state.
#[derive(Debug, Clone)]
pub struct LassoFit {
    pub intercept: Array1<f64>,
    pub exog: Array2<f64>,
    pub lags: Vec<Array2<f64>>,
    /// Per outcome row: objective value after each sweep.
    pub objective_trace: Vec<Vec<f64>>,
    pub sweeps: Vec<usize>,
    pub converged: Vec<bool>,
}

impl LassoFit {
    fn from_rows(dims: &Dims, rows: Vec<RowFit>) -> Self {
        let p = dims.p;
        let mut intercept = Array1::zeros(p);
        let mut exog = Array2::zeros((p, dims.j));
        let mut lags = vec![Array2::zeros((p, p)); dims.h];
        let mut objective_trace = Vec::with_capacity(p);
        let mut sweeps = Vec::with_capacity(p);
        let mut converged = Vec::with_capacity(p);
        for (j, row) in rows.into_iter().enumerate() {
            intercept[j] = row.intercept;
            for c in 0..dims.j {
                exog[[j, c]] = row.coefs[c];
            }
            for lag in 0..dims.h {
                for i in 0..p {
                    lags[lag][[j, i]] = row.coefs[dims.j + lag * p + i];
                }
            }
            objective_trace.push(row.objective);
            sweeps.push(row.sweeps);
            converged.push(row.converged);
        }
        LassoFit {
            intercept,
            exog,
            lags,
            objective_trace,
            sweeps,
            converged,
        }
    }

    /// Active predictor columns (nonzero coefficients) per outcome row.
    pub fn active_set(&self) -> Vec<Vec<usize>> {
        let p = self.intercept.len();
        let j = self.exog.ncols();
        let h = self.lags.len();
        (0..p)
            .map(|row| {
                let mut active = Vec::new();
                for c in 0..j {
                    if self.exog[[row, c]] != 0.0 {
                        active.push(c);
                    }
                }
                for lag in 0..h {
                    for i in 0..p {
                        if self.lags[lag][[row, i]] != 0.0 {
                            active.push(j + lag * p + i);
                        }
                    }
                }
                active
            })
            .collect()
    }
}

struct RowFit {
    intercept: f64,
    coefs: Vec<f64>,
    objective: Vec<f64>,
    sweeps: usize,
    converged: bool,
}

/// Weighted L1-penalized VAR fit for one state: cyclic coordinate descent
/// with soft thresholding per outcome row. `weights` has one entry per time
/// row; the first H entries are ignored (conditioning rows).
pub fn weighted_lasso_fit(
    data: &Dataset,
    dims: &Dims,
    weights: &[f64],
    lambda_k: f64,
) -> Result<LassoFit> {
    weighted_lasso_fit_from(data, dims, weights, lambda_k, None)
}

/// As [`weighted_lasso_fit`], warm-started from previous coefficients
/// (the EM loop reuses the last M-step's solution).
pub fn weighted_lasso_fit_from(
    data: &Dataset,
    dims: &Dims,
    weights: &[f64],
    lambda_k: f64,
    warm: Option<&VarParams>,
) -> Result<LassoFit> {
    let design = build_design(data, dims, weights)?;
    let wsum: f64 = design.weights.iter().sum();
    if wsum <= 0.0 {
        return Err(HsvarError::DegenerateState {
            state: usize::MAX,
            ess: wsum,
            min: 0.0,
        });
    }
    let rows: Result<Vec<RowFit>> = design
        .responses
        .iter()
        .enumerate()
        .map(|(outcome, y)| {
            let warm_coefs = warm.map(|v| {
                let mut coefs = Vec::with_capacity(dims.n_predictors());
                for c in 0..dims.j {
                    coefs.push(v.exog[[outcome, c]]);
                }
                for lag in 0..dims.h {
                    for i in 0..dims.p {
                        coefs.push(v.lags[lag][[outcome, i]]);
                    }
                }
                coefs
            });
            solve_penalized_row(
                &design.cols,
                y,
                &design.weights,
                lambda_k,
                warm_coefs.as_deref(),
            )
        })
        .collect();
    Ok(LassoFit::from_rows(dims, rows?))
}

/// Smallest penalty that zeroes every penalized coefficient of every outcome
/// row for this design (computed in the standardized predictor space).
pub fn lasso_lambda_max(data: &Dataset, dims: &Dims, weights: &[f64]) -> Result<f64> {
    let design = build_design(data, dims, weights)?;
    let wsum: f64 = design.weights.iter().sum();
    if wsum <= 0.0 {
        return Err(HsvarError::input("all weights are zero"));
    }
    let std_cols = standardize_columns(&design.cols, &design.weights, wsum);
    let mut lam = 0.0f64;
    for y in &design.responses {
        let y_mean = dot_w(&design.weights, y) / wsum;
        for col in &std_cols {
            if let Some(u) = col {
                let mut acc = 0.0;
                for ((uv, yv), wv) in u.iter().zip(y.iter()).zip(design.weights.iter()) {
                    acc += wv * uv * (yv - y_mean);
                }
                lam = lam.max(2.0 * acc.abs());
            }
        }
    }
    Ok(lam)
}

fn dot_w(w: &[f64], v: &[f64]) -> f64 {
    w.iter().zip(v.iter()).map(|(a, b)| a * b).sum()
}

/// Standardized columns (weighted mean 0, weighted variance 1), with
/// constant columns excluded (None). Returns the transformed data only;
/// means/scales are recomputed by callers that need the back-transform.
fn standardize_columns(cols: &[Vec<f64>], w: &[f64], wsum: f64) -> Vec<Option<Vec<f64>>> {
    cols.iter()
        .map(|col| {
            let mean = dot_w(w, col) / wsum;
            let var = col
                .iter()
                .zip(w.iter())
                .map(|(v, wv)| wv * (v - mean) * (v - mean))
                .sum::<f64>()
                / wsum;
            if var < 1e-12 {
                None
            } else {
                let scale = var.sqrt();
                Some(col.iter().map(|v| (v - mean) / scale).collect())
            }
        })
        .collect()
}

fn solve_penalized_row(
    cols: &[Vec<f64>],
    y: &[f64],
    w: &[f64],
    lambda: f64,
    warm: Option<&[f64]>,
) -> Result<RowFit> {
    let n = y.len();
    let q = cols.len();
    let wsum: f64 = w.iter().sum();

    // Standardize, remembering means and scales for the back-transform.
    let mut means = vec![0.0; q];
    let mut scales = vec![1.0; q];
    let mut active_cols: Vec<Option<Vec<f64>>> = Vec::with_capacity(q);
    for (c, col) in cols.iter().enumerate() {
        let mean = dot_w(w, col) / wsum;
        let var = col
            .iter()
            .zip(w.iter())
            .map(|(v, wv)| wv * (v - mean) * (v - mean))
            .sum::<f64>()
            / wsum;
        means[c] = mean;
        if var < 1e-12 {
            active_cols.push(None);
        } else {
            scales[c] = var.sqrt();
            active_cols.push(Some(
                col.iter().map(|v| (v - mean) / scales[c]).collect(),
            ));
        }
    }
    let y_mean = dot_w(w, y) / wsum;

    let mut theta = vec![0.0; q];
    let mut resid: Vec<f64> = y.iter().map(|v| v - y_mean).collect();
    if let Some(warm_coefs) = warm {
        for c in 0..q {
            if let Some(u) = &active_cols[c] {
                let th = warm_coefs[c] * scales[c];
                if th != 0.0 {
                    theta[c] = th;
                    for i in 0..n {
                        resid[i] -= th * u[i];
                    }
                }
            }
        }
    }
    let mut objective = Vec::new();
    let mut sweeps = 0;
    let mut converged = false;

    while sweeps < CD_MAX_SWEEPS {
        sweeps += 1;
        let mut max_delta = 0.0f64;
        for c in 0..q {
            let Some(u) = &active_cols[c] else { continue };
            // rho = sum w u r with the c-th contribution added back;
            // standardized columns have sum w u^2 = wsum.
            let mut rho = 0.0;
            for i in 0..n {
                rho += w[i] * u[i] * resid[i];
            }
            rho += wsum * theta[c];
            let new = soft_threshold(rho, lambda / 2.0) / wsum;
            let delta = new - theta[c];
            if delta != 0.0 {
                for i in 0..n {
                    resid[i] -= delta * u[i];
                }
                theta[c] = new;
                max_delta = max_delta.max(delta.abs());
            }
        }
        let sse: f64 = resid
            .iter()
            .zip(w.iter())
            .map(|(r, wv)| wv * r * r)
            .sum();
        let l1: f64 = theta.iter().map(|t| t.abs()).sum();
        objective.push(sse + lambda * l1);
        if max_delta < CD_TOL {
            converged = true;
            break;
        }
    }

    // Back-transform to the original predictor scale.
    let mut coefs = vec![0.0; q];
    let mut intercept = y_mean;
    for c in 0..q {
        if active_cols[c].is_some() {
            coefs[c] = theta[c] / scales[c];
            intercept -= coefs[c] * means[c];
        }
    }
    Ok(RowFit {
        intercept,
        coefs,
        objective,
        sweeps,
        converged,
    })
}

fn soft_threshold(x: f64, gamma: f64) -> f64 {
    if x > gamma {
        x - gamma
    } else if x < -gamma {
        x + gamma
    } else {
        0.0
    }
}

/// Unpenalized weighted least squares restricted to an active set; inactive
/// coefficients stay exactly zero. `active` lists predictor columns per
/// outcome row in the [`build_design`] layout.
pub fn relaxed_refit(
    data: &Dataset,
    dims: &Dims,
    weights: &[f64],
    active: &[Vec<usize>],
) -> Result<LassoFit> {
    if active.len() != dims.p {
        return Err(HsvarError::input(format!(
            "active set has {} rows, expected {}",
            active.len(),
            dims.p
        )));
    }
    let design = build_design(data, dims, weights)?;
    let mut rows = Vec::with_capacity(dims.p);
    for (j, act) in active.iter().enumerate() {
        let y = &design.responses[j];
        let k = act.len();
        // Normal equations over [intercept, active columns].
        let mut xtx = nalgebra::DMatrix::<f64>::zeros(k + 1, k + 1);
        let mut xty = nalgebra::DVector::<f64>::zeros(k + 1);
        let col = |idx: usize| -> &Vec<f64> { &design.cols[idx] };
        let wsum: f64 = design.weights.iter().sum();
        xtx[(0, 0)] = wsum;
        xty[0] = dot_w(&design.weights, y);
        for (a, &ca) in act.iter().enumerate() {
            let ua = col(ca);
            let mut s0 = 0.0;
            let mut sy = 0.0;
            for i in 0..y.len() {
                s0 += design.weights[i] * ua[i];
                sy += design.weights[i] * ua[i] * y[i];
            }
            xtx[(0, a + 1)] = s0;
            xtx[(a + 1, 0)] = s0;
            xty[a + 1] = sy;
            for (b, &cb) in act.iter().enumerate().take(a + 1) {
                let ub = col(cb);
                let mut s = 0.0;
                for i in 0..y.len() {
                    s += design.weights[i] * ua[i] * ub[i];
                }
                xtx[(a + 1, b + 1)] = s;
                xtx[(b + 1, a + 1)] = s;
            }
        }
        let sol = nalgebra::Cholesky::new(xtx.clone())
            .map(|c| c.solve(&xty))
            .or_else(|| xtx.lu().solve(&xty))
            .ok_or_else(|| {
                HsvarError::numerical(format!(
                    "singular restricted design for outcome row {j}"
                ))
            })?;
        let mut coefs = vec![0.0; dims.n_predictors()];
        for (a, &ca) in act.iter().enumerate() {
            coefs[ca] = sol[a + 1];
        }
        rows.push(RowFit {
            intercept: sol[0],
            coefs,
            objective: Vec::new(),
            sweeps: 0,
            converged: true,
        });
    }
    Ok(LassoFit::from_rows(dims, rows))
}

/// Weighted residual second-moment matrix, symmetrized by construction and
/// ridge-inflated so the smallest eigenvalue is at least [`SIGMA_EIG_FLOOR`].
pub fn covariance_update(residuals: &Array2<f64>, weights: &[f64]) -> Result<Array2<f64>> {
    let n = residuals.nrows();
    let p = residuals.ncols();
    if weights.len() != n {
        return Err(HsvarError::input("weights length mismatch"));
    }
    let wsum: f64 = weights.iter().sum();
    if wsum <= 0.0 {
        return Err(HsvarError::input("covariance update needs positive total weight"));
    }
    let mut sigma = Array2::zeros((p, p));
    for t in 0..n {
        let w = weights[t];
        if w == 0.0 {
            continue;
        }
        for a in 0..p {
            let ea = residuals[[t, a]];
            for b in 0..=a {
                sigma[[a, b]] += w * ea * residuals[[t, b]];
            }
        }
    }
    for a in 0..p {
        for b in 0..=a {
            sigma[[a, b]] /= wsum;
            sigma[[b, a]] = sigma[[a, b]];
        }
    }
    // Eigenvalue floor.
    let m = nalgebra::DMatrix::from_fn(p, p, |r, c| sigma[[r, c]]);
    let eig_min = m
        .symmetric_eigenvalues()
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min);
    if eig_min < SIGMA_EIG_FLOOR {
        let bump = SIGMA_EIG_FLOOR - eig_min;
        for a in 0..p {
            sigma[[a, a]] += bump;
        }
    }
    Ok(sigma)
}

/// Residual matrix of one state's fit on the usable rows H..T.
pub fn residuals(data: &Dataset, params: &VarParams) -> Result<Array2<f64>> {
    let h = params.lags.len();
    let t_len = data.n_rows();
    let p = params.intercept.len();
    let mut out = Array2::zeros((t_len - h, p));
    for t in h..t_len {
        let mean = conditional_mean(t, data, params)?;
        for r in 0..p {
            out[[t - h, r]] = data.y[[t, r]] - mean[r];
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::TimeIndex;
    use ndarray::array;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn small_dataset(t_len: usize, p: usize, j: usize, seed: u64) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let y = Array2::from_shape_fn((t_len, p), |_| rng.random::<f64>() * 2.0 - 1.0);
        let x = Array2::from_shape_fn((t_len, j), |_| rng.random::<f64>() * 2.0 - 1.0);
        let z = Array2::zeros((t_len, 0));
        Dataset::new(y, x, z, TimeIndex::range(t_len)).unwrap()
    }

    #[test]
    fn conditional_mean_zero_lags_returns_intercept() {
        let data = small_dataset(10, 2, 0, 1);
        let params = VarParams {
            intercept: array![1.5, -0.5],
            exog: Array2::zeros((2, 0)),
            lags: vec![Array2::zeros((2, 2)); 3],
            sigma: Array2::eye(2),
        };
        let mean = conditional_mean(5, &data, &params).unwrap();
        assert_eq!(mean, array![1.5, -0.5]);
    }

    #[test]
    fn conditional_mean_scalar_ar1() {
        let mut data = small_dataset(4, 1, 0, 2);
        data.y[[1, 0]] = 2.0;
        let params = VarParams {
            intercept: array![1.0],
            exog: Array2::zeros((1, 0)),
            lags: vec![array![[0.5]]],
            sigma: Array2::eye(1),
        };
        let mean = conditional_mean(2, &data, &params).unwrap();
        assert!((mean[0] - 2.0).abs() < 1e-15);
    }

    #[test]
    fn conditional_mean_matches_naive_loops() {
        let data = small_dataset(30, 3, 2, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let params = VarParams {
            intercept: Array1::from_shape_fn(3, |_| rng.random::<f64>()),
            exog: Array2::from_shape_fn((3, 2), |_| rng.random::<f64>() - 0.5),
            lags: (0..2)
                .map(|_| Array2::from_shape_fn((3, 3), |_| rng.random::<f64>() * 0.4 - 0.2))
                .collect(),
            sigma: Array2::eye(3),
        };
        for t in [2, 10, 29] {
            let got = conditional_mean(t, &data, &params).unwrap();
            for r in 0..3 {
                let mut expect = params.intercept[r];
                for c in 0..2 {
                    expect += params.exog[[r, c]] * data.x[[t, c]];
                }
                for h in 0..2 {
                    for c in 0..3 {
                        expect += params.lags[h][[r, c]] * data.y[[t - h - 1, c]];
                    }
                }
                assert!((got[r] - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn conditional_mean_requires_lags() {
        let data = small_dataset(10, 2, 0, 4);
        let params = VarParams::zeros(2, 0, 3);
        assert!(conditional_mean(2, &data, &params).is_err());
        assert!(conditional_mean(3, &data, &params).is_ok());
    }

    #[test]
    fn emission_loglik_standard_normal_values() {
        // p = 1, sigma = 1, residual 0 -> -0.5 ln(2 pi).
        let mut data = small_dataset(3, 1, 0, 5);
        data.y[[2, 0]] = 0.7;
        let params = ModelParams {
            dims: Dims { k: 1, p: 1, h: 0, j: 0, l: 0, m: 1 },
            hazard: crate::hidden::HazardParams::zeros(1, 0, crate::hidden::LinkFn::Cloglog),
            omega: crate::hidden::SwitchMatrix { omega: Array2::zeros((1, 1)) },
            pi: crate::hidden::InitialDistribution::uniform(1),
            var: vec![VarParams {
                intercept: array![0.7],
                exog: Array2::zeros((1, 0)),
                lags: vec![],
                sigma: Array2::eye(1),
            }],
        };
        let ll = emission_loglik(&data, &params).unwrap();
        assert!((ll[[2, 0]] + 0.5 * LN_2PI).abs() < 1e-12);
    }

    #[test]
    fn emission_loglik_identity_covariance_p2() {
        // p = 2, Sigma = I, residual (1, 0) -> -ln(2 pi) - 0.5.
        let mut data = small_dataset(2, 2, 0, 6);
        data.y[[1, 0]] = 1.0;
        data.y[[1, 1]] = 0.0;
        let params = ModelParams {
            dims: Dims { k: 1, p: 2, h: 0, j: 0, l: 0, m: 1 },
            hazard: crate::hidden::HazardParams::zeros(1, 0, crate::hidden::LinkFn::Cloglog),
            omega: crate::hidden::SwitchMatrix { omega: Array2::zeros((1, 1)) },
            pi: crate::hidden::InitialDistribution::uniform(1),
            var: vec![VarParams::zeros(2, 0, 0)],
        };
        let ll = emission_loglik(&data, &params).unwrap();
        assert!((ll[[1, 0]] - (-LN_2PI - 0.5)).abs() < 1e-12);
    }

    #[test]
    fn emission_loglik_matches_dense_inverse_oracle() {
        let data = small_dataset(40, 3, 1, 8);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut sigma = Array2::eye(3);
        sigma[[0, 1]] = 0.4;
        sigma[[1, 0]] = 0.4;
        sigma[[1, 2]] = -0.2;
        sigma[[2, 1]] = -0.2;
        sigma[[0, 0]] = 1.5;
        let var = VarParams {
            intercept: Array1::from_shape_fn(3, |_| rng.random::<f64>()),
            exog: Array2::from_shape_fn((3, 1), |_| rng.random::<f64>()),
            lags: vec![Array2::from_shape_fn((3, 3), |_| {
                rng.random::<f64>() * 0.3 - 0.15
            })],
            sigma: sigma.clone(),
            };
        let params = ModelParams {
            dims: Dims { k: 1, p: 3, h: 1, j: 1, l: 0, m: 1 },
            hazard: crate::hidden::HazardParams::zeros(1, 0, crate::hidden::LinkFn::Cloglog),
            omega: crate::hidden::SwitchMatrix { omega: Array2::zeros((1, 1)) },
            pi: crate::hidden::InitialDistribution::uniform(1),
            var: vec![var.clone()],
        };
        let ll = emission_loglik(&data, &params).unwrap();

        // Dense inverse + explicit quadratic form.
        let m = nalgebra::DMatrix::from_fn(3, 3, |r, c| sigma[[r, c]]);
        let inv = m.clone().try_inverse().unwrap();
        let det = m.determinant();
        for t in 1..40 {
            let mean = conditional_mean(t, &data, &var).unwrap();
            let r: Vec<f64> = (0..3).map(|i| data.y[[t, i]] - mean[i]).collect();
            let mut quad = 0.0;
            for a in 0..3 {
                for b in 0..3 {
                    quad += r[a] * inv[(a, b)] * r[b];
                }
            }
            let expect = -0.5 * (3.0 * LN_2PI + det.ln() + quad);
            assert!((ll[[t, 0]] - expect).abs() < 1e-10);
        }
        // Conditioning row is exactly zero.
        assert_eq!(ll[[0, 0]], 0.0);
    }

    #[test]
    fn stability_check_zero_lags_is_stable() {
        let report = stability_check(&[VarParams::zeros(2, 0, 3)]);
        assert_eq!(report.states[0].spectral_radius, 0.0);
        assert!(report.states[0].stable);
    }

    #[test]
    fn stability_check_explosive_scalar() {
        let var = VarParams {
            intercept: array![0.0],
            exog: Array2::zeros((1, 0)),
            lags: vec![array![[1.1]]],
            sigma: Array2::eye(1),
        };
        let report = stability_check(&[var]);
        assert!((report.states[0].spectral_radius - 1.1).abs() < 1e-10);
        assert!(!report.states[0].stable);
    }

    #[test]
    fn covariance_update_unit_weights_is_sample_covariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let resid = Array2::from_shape_fn((50, 2), |_| rng.random::<f64>() - 0.5);
        let w = vec![1.0; 50];
        let sigma = covariance_update(&resid, &w).unwrap();
        for a in 0..2 {
            for b in 0..2 {
                let mut s = 0.0;
                for t in 0..50 {
                    s += resid[[t, a]] * resid[[t, b]];
                }
                s /= 50.0;
                assert!((sigma[[a, b]] - s).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn covariance_update_single_weight_gets_floored() {
        let mut resid = Array2::zeros((5, 2));
        resid[[3, 0]] = 1.0;
        resid[[3, 1]] = 2.0;
        let mut w = vec![0.0; 5];
        w[3] = 0.7;
        let sigma = covariance_update(&resid, &w).unwrap();
        // Rank-1 outer product plus the diagonal bump.
        let m = nalgebra::DMatrix::from_fn(2, 2, |r, c| sigma[[r, c]]);
        let min_eig = m
            .symmetric_eigenvalues()
            .iter()
            .cloned()
            .fold(f64::INFINITY, f64::min);
        assert!(min_eig >= SIGMA_EIG_FLOOR - 1e-15);
        assert!((sigma[[0, 1]] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn covariance_update_matches_weighted_moment_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let resid = Array2::from_shape_fn((30, 3), |_| rng.random::<f64>() * 2.0 - 1.0);
        let w: Vec<f64> = (0..30).map(|_| rng.random::<f64>()).collect();
        let sigma = covariance_update(&resid, &w).unwrap();
        let wsum: f64 = w.iter().sum();
        for a in 0..3 {
            for b in 0..3 {
                let mut s = 0.0;
                for t in 0..30 {
                    s += w[t] * resid[[t, a]] * resid[[t, b]];
                }
                s /= wsum;
                assert!((sigma[[a, b]] - s).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn lasso_saturates_above_lambda_max() {
        let data = small_dataset(60, 2, 1, 14);
        let dims = Dims { k: 1, p: 2, h: 2, j: 1, l: 0, m: 1 };
        let w = vec![1.0; 60];
        let lam_max = lasso_lambda_max(&data, &dims, &w).unwrap();
        let fit = weighted_lasso_fit(&data, &dims, &w, lam_max * 1.0001).unwrap();
        assert!(fit.exog.iter().all(|&v| v == 0.0));
        assert!(fit.lags.iter().all(|a| a.iter().all(|&v| v == 0.0)));
        // Just below lambda_max at least one coefficient activates.
        let fit2 = weighted_lasso_fit(&data, &dims, &w, lam_max * 0.99).unwrap();
        let nnz = fit2.exog.iter().filter(|&&v| v != 0.0).count()
            + fit2
                .lags
                .iter()
                .map(|a| a.iter().filter(|&&v| v != 0.0).count())
                .sum::<usize>();
        assert!(nnz >= 1);
    }

    #[test]
    fn lasso_objective_is_monotone() {
        let data = small_dataset(80, 3, 2, 15);
        let dims = Dims { k: 1, p: 3, h: 3, j: 2, l: 0, m: 1 };
        let mut rng = ChaCha8Rng::seed_from_u64(16);
        let w: Vec<f64> = (0..80).map(|_| rng.random::<f64>()).collect();
        let fit = weighted_lasso_fit(&data, &dims, &w, 2.5).unwrap();
        for trace in &fit.objective_trace {
            for s in 1..trace.len() {
                assert!(
                    trace[s] <= trace[s - 1] + 1e-12,
                    "objective increased: {} -> {}",
                    trace[s - 1],
                    trace[s]
                );
            }
        }
    }

    #[test]
    fn relaxed_refit_full_active_set_matches_lambda_zero() {
        let data = small_dataset(70, 2, 1, 17);
        let dims = Dims { k: 1, p: 2, h: 2, j: 1, l: 0, m: 1 };
        let w = vec![1.0; 70];
        let lasso = weighted_lasso_fit(&data, &dims, &w, 0.0).unwrap();
        let full: Vec<Vec<usize>> = vec![(0..dims.n_predictors()).collect(); 2];
        let refit = relaxed_refit(&data, &dims, &w, &full).unwrap();
        for r in 0..2 {
            assert!((lasso.intercept[r] - refit.intercept[r]).abs() < 1e-7);
        }
        for (a, b) in lasso.exog.iter().zip(refit.exog.iter()) {
            assert!((a - b).abs() < 1e-7);
        }
        for (la, lb) in lasso.lags.iter().zip(refit.lags.iter()) {
            for (a, b) in la.iter().zip(lb.iter()) {
                assert!((a - b).abs() < 1e-7);
            }
        }
    }

    #[test]
    fn relaxed_refit_empty_active_set_is_weighted_mean() {
        let data = small_dataset(50, 2, 1, 18);
        let dims = Dims { k: 1, p: 2, h: 1, j: 1, l: 0, m: 1 };
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        let w: Vec<f64> = (0..50).map(|_| rng.random::<f64>()).collect();
        let refit = relaxed_refit(&data, &dims, &w, &[vec![], vec![]]).unwrap();
        let wsum: f64 = w[1..].iter().sum();
        for r in 0..2 {
            let mean: f64 = (1..50).map(|t| w[t] * data.y[[t, r]]).sum::<f64>() / wsum;
            assert!((refit.intercept[r] - mean).abs() < 1e-10);
            assert!(refit.exog.row(r).iter().all(|&v| v == 0.0));
        }
    }
}
