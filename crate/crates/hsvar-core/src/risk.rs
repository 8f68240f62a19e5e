//! Dynamic multivariate risk analytics on a fitted model.
//!
//! At each usable time the one-step-ahead predictive law is a K-component
//! Gaussian mixture with filtering weights psi, component means from the
//! state-conditional VAR and component covariances Sigma_k. Risk is an
//! upper-tail event (high concentrations): VaR is the (1 - tau) quantile,
//! ES the expectation above it. MCoVaR / MCoES condition the target on the
//! remaining coordinates pinned at distressed quantiles or medians, and the
//! standardized Shapley value averages each coordinate's marginal risk
//! contribution over every distress configuration.

use crate::error::{HsvarError, Result};
use crate::hidden::filtering_weights_from;
use crate::model::{Dataset, ModelParams};
use ndarray::{Array1, Array2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Exact subset enumeration is capped at this many coordinates.
pub const MAX_SHAPLEY_DIM: usize = 12;

const SQRT_2: f64 = std::f64::consts::SQRT_2;
const SQRT_2PI: f64 = 2.5066282746310002;

fn std_normal_cdf(x: f64) -> f64 {
    0.5 * statrs::function::erf::erfc(-x / SQRT_2)
}

fn std_normal_sf(x: f64) -> f64 {
    0.5 * statrs::function::erf::erfc(x / SQRT_2)
}

fn std_normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / SQRT_2PI
}

/// One-step-ahead predictive mixture at time t.
#[derive(Debug, Clone)]
pub struct PredictiveMixture {
    pub t: usize,
    /// Filtering weights, length K, summing to one.
    pub weights: Vec<f64>,
    pub means: Vec<Array1<f64>>,
    pub covs: Vec<Array2<f64>>,
}

/// Univariate Gaussian mixture with closed-form tail machinery.
#[derive(Debug, Clone)]
pub struct UnivariateMixture {
    pub weights: Vec<f64>,
    pub means: Vec<f64>,
    pub sds: Vec<f64>,
}

impl UnivariateMixture {
    pub fn cdf(&self, x: f64) -> f64 {
        self.weights
            .iter()
            .zip(self.means.iter().zip(self.sds.iter()))
            .map(|(w, (m, s))| w * std_normal_cdf((x - m) / s))
            .sum()
    }

    pub fn pdf(&self, x: f64) -> f64 {
        self.weights
            .iter()
            .zip(self.means.iter().zip(self.sds.iter()))
            .map(|(w, (m, s))| w * std_normal_pdf((x - m) / s) / s)
            .sum()
    }

    pub fn mean(&self) -> f64 {
        self.weights
            .iter()
            .zip(self.means.iter())
            .map(|(w, m)| w * m)
            .sum()
    }

    pub fn variance(&self) -> f64 {
        let mean = self.mean();
        self.weights
            .iter()
            .zip(self.means.iter().zip(self.sds.iter()))
            .map(|(w, (m, s))| w * (s * s + m * m))
            .sum::<f64>()
            - mean * mean
    }

    /// Upper-tail quantile: the (1 - tau) quantile, found by bisection on
    /// the mixture CDF to within 1e-10 in CDF value.
    pub fn upper_quantile(&self, tau: f64) -> Result<f64> {
        if !(0.0..1.0).contains(&tau) || tau == 0.0 {
            return Err(HsvarError::input("tau must lie in (0, 1)"));
        }
        let target = 1.0 - tau;
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for (m, s) in self.means.iter().zip(self.sds.iter()) {
            lo = lo.min(m - 10.0 * s);
            hi = hi.max(m + 10.0 * s);
        }
        let span = (hi - lo).max(1.0);
        let mut widen = 0;
        while self.cdf(hi) < target && widen < 60 {
            hi += span;
            widen += 1;
        }
        while self.cdf(lo) > target && widen < 120 {
            lo -= span;
            widen += 1;
        }
        for _ in 0..500 {
            let mid = 0.5 * (lo + hi);
            let c = self.cdf(mid);
            if (c - target).abs() <= 1e-10 {
                return Ok(mid);
            }
            if c < target {
                lo = mid;
            } else {
                hi = mid;
            }
            if (hi - lo) <= f64::EPSILON * (1.0 + mid.abs()) {
                break;
            }
        }
        Ok(0.5 * (lo + hi))
    }

    /// Closed-form tail expectation E[Y | Y >= threshold].
    pub fn tail_expectation(&self, threshold: f64) -> f64 {
        let mut num = 0.0;
        let mut den = 0.0;
        for (w, (m, s)) in self
            .weights
            .iter()
            .zip(self.means.iter().zip(self.sds.iter()))
        {
            let z = (threshold - m) / s;
            let sf = std_normal_sf(z);
            num += w * (sf * m + s * std_normal_pdf(z));
            den += w * sf;
        }
        num / den
    }
}

/// Predictive mixtures for every usable time, sharing one forward pass.
pub fn predictive_mixtures(data: &Dataset, params: &ModelParams) -> Result<Vec<PredictiveMixture>> {
    let emission = crate::emission::emission_loglik(data, params)?;
    let psi = filtering_weights_from(data, params, &emission)?;
    let h = params.dims.h;
    (h..data.n_rows())
        .map(|t| mixture_at(t, data, params, &psi))
        .collect()
}

/// Predictive mixture at a single time `t >= H`.
pub fn predictive_mixture(t: usize, data: &Dataset, params: &ModelParams) -> Result<PredictiveMixture> {
    if t < params.dims.h {
        return Err(HsvarError::input(format!(
            "predictive mixture needs t >= {}, got {t}",
            params.dims.h
        )));
    }
    if t >= data.n_rows() {
        return Err(HsvarError::input("time index beyond the series"));
    }
    let psi = crate::hidden::filtering_weights(data, params)?;
    mixture_at(t, data, params, &psi)
}

fn mixture_at(
    t: usize,
    data: &Dataset,
    params: &ModelParams,
    psi: &Array2<f64>,
) -> Result<PredictiveMixture> {
    let k_len = params.dims.k;
    let mut weights = Vec::with_capacity(k_len);
    let mut means = Vec::with_capacity(k_len);
    let mut covs = Vec::with_capacity(k_len);
    for k in 0..k_len {
        weights.push(psi[[t, k]]);
        means.push(crate::emission::conditional_mean(t, data, &params.var[k])?);
        covs.push(params.var[k].sigma.clone());
    }
    Ok(PredictiveMixture {
        t,
        weights,
        means,
        covs,
    })
}

impl PredictiveMixture {
    pub fn n_outcomes(&self) -> usize {
        self.means[0].len()
    }

    /// Univariate marginal of coordinate `i`.
    pub fn marginal(&self, i: usize) -> UnivariateMixture {
        UnivariateMixture {
            weights: self.weights.clone(),
            means: self.means.iter().map(|m| m[i]).collect(),
            sds: self.covs.iter().map(|c| c[[i, i]].sqrt()).collect(),
        }
    }

    /// Joint mixture density, used by integration tests.
    pub fn density(&self, y: &Array1<f64>) -> Result<f64> {
        let p = self.n_outcomes();
        let mut total = 0.0;
        for k in 0..self.weights.len() {
            let m = nalgebra::DMatrix::from_fn(p, p, |r, c| self.covs[k][[r, c]]);
            let chol = nalgebra::Cholesky::new(m)
                .ok_or_else(|| HsvarError::numerical("component covariance not PD"))?;
            let l = chol.unpack();
            let mut resid = nalgebra::DVector::zeros(p);
            for r in 0..p {
                resid[r] = y[r] - self.means[k][r];
            }
            let u = l
                .solve_lower_triangular(&resid)
                .ok_or_else(|| HsvarError::numerical("triangular solve failed"))?;
            let quad: f64 = u.iter().map(|v| v * v).sum();
            let logdet: f64 = (0..p).map(|i| l[(i, i)].ln()).sum::<f64>() * 2.0;
            let logpdf = -0.5 * (p as f64 * (2.0 * std::f64::consts::PI).ln() + logdet + quad);
            total += self.weights[k] * logpdf.exp();
        }
        Ok(total)
    }
}

/// Upper-tail VaR of coordinate `i` at level tau.
pub fn marginal_var(mix: &PredictiveMixture, i: usize, tau: f64) -> Result<f64> {
    mix.marginal(i).upper_quantile(tau)
}

/// Expected shortfall of coordinate `i` at level tau.
pub fn marginal_es(mix: &PredictiveMixture, i: usize, tau: f64) -> Result<f64> {
    let marg = mix.marginal(i);
    let var = marg.upper_quantile(tau)?;
    Ok(marg.tail_expectation(var))
}

/// A distress configuration: the target coordinate, the distressed subset
/// (pinned at their tau*-VaR) and the remaining coordinates pinned at their
/// medians.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DistressConfig {
    pub target: usize,
    pub distress: Vec<usize>,
    pub tau: f64,
    pub tau_star: f64,
}

impl DistressConfig {
    pub fn new(target: usize, distress: Vec<usize>, tau: f64, tau_star: f64) -> Result<Self> {
        for level in [tau, tau_star] {
            if !(0.0 < level && level <= 0.5) {
                return Err(HsvarError::input("tau and tau* must lie in (0, 0.5]"));
            }
        }
        if distress.contains(&target) {
            return Err(HsvarError::input("the target cannot be in distress"));
        }
        let mut seen = distress.clone();
        seen.sort_unstable();
        seen.dedup();
        if seen.len() != distress.len() {
            return Err(HsvarError::input("duplicate coordinates in the distress set"));
        }
        Ok(DistressConfig {
            target,
            distress,
            tau,
            tau_star,
        })
    }

    /// Complement of target and distress set in 0..p.
    pub fn non_distress(&self, p: usize) -> Vec<usize> {
        (0..p)
            .filter(|j| *j != self.target && !self.distress.contains(j))
            .collect()
    }
}

/// Gaussian conditioning of coordinate `target` on `coords` pinned at
/// `values`, applied component by component with log-space reweighting.
/// Empty `coords` returns the unconditional marginal.
pub fn conditional_marginal(
    mix: &PredictiveMixture,
    target: usize,
    coords: &[usize],
    values: &[f64],
) -> Result<UnivariateMixture> {
    if coords.len() != values.len() {
        return Err(HsvarError::input("coords and values must have equal length"));
    }
    if coords.is_empty() {
        return Ok(mix.marginal(target));
    }
    let family = ConditionalFamily::new(mix, target, coords)?;
    Ok(family.mixture_for(mix, values))
}

/// Per-component factorizations for conditioning a fixed target on a fixed
/// coordinate set; only the conditioning values vary across calls.
pub(crate) struct ConditionalFamily {
    coords: Vec<usize>,
    comps: Vec<CondComponent>,
}

struct CondComponent {
    /// Cholesky factor of the conditioning block.
    chol: nalgebra::Cholesky<f64, nalgebra::Dyn>,
    /// Sigma[target, coords].
    cross: nalgebra::DVector<f64>,
    /// Conditional standard deviation (free of the conditioning values).
    cond_sd: f64,
    /// Mean of the conditioning block.
    mu_c: nalgebra::DVector<f64>,
    mu_target: f64,
    log_det_half: f64,
}

impl ConditionalFamily {
    pub fn new(mix: &PredictiveMixture, target: usize, coords: &[usize]) -> Result<Self> {
        let c_len = coords.len();
        let mut comps = Vec::with_capacity(mix.weights.len());
        for k in 0..mix.weights.len() {
            let sigma = &mix.covs[k];
            let block = nalgebra::DMatrix::from_fn(c_len, c_len, |r, c| {
                sigma[[coords[r], coords[c]]]
            });
            let chol = nalgebra::Cholesky::new(block).ok_or_else(|| {
                HsvarError::numerical(format!(
                    "conditioning covariance block of component {k} is singular"
                ))
            })?;
            let cross = nalgebra::DVector::from_iterator(
                c_len,
                coords.iter().map(|&c| sigma[[target, c]]),
            );
            let solved = chol.solve(&cross);
            let cond_var = sigma[[target, target]] - cross.dot(&solved);
            if cond_var <= 0.0 {
                return Err(HsvarError::numerical(format!(
                    "non-positive conditional variance in component {k}"
                )));
            }
            let log_det_half: f64 = (0..c_len).map(|i| chol.l_dirty()[(i, i)].ln()).sum();
            comps.push(CondComponent {
                chol,
                cross,
                cond_sd: cond_var.sqrt(),
                mu_c: nalgebra::DVector::from_iterator(
                    c_len,
                    coords.iter().map(|&c| mix.means[k][c]),
                ),
                mu_target: mix.means[k][target],
                log_det_half,
            });
        }
        Ok(ConditionalFamily {
            coords: coords.to_vec(),
            comps,
        })
    }

    pub fn mixture_for(&self, mix: &PredictiveMixture, values: &[f64]) -> UnivariateMixture {
        let c_len = self.coords.len();
        let k_len = self.comps.len();
        let mut log_w = Vec::with_capacity(k_len);
        let mut means = Vec::with_capacity(k_len);
        let mut sds = Vec::with_capacity(k_len);
        for (k, comp) in self.comps.iter().enumerate() {
            let mut dev = nalgebra::DVector::zeros(c_len);
            for r in 0..c_len {
                dev[r] = values[r] - comp.mu_c[r];
            }
            let solved = comp.chol.solve(&dev);
            let quad = dev.dot(&solved);
            let logpdf = -0.5 * (c_len as f64 * (2.0 * std::f64::consts::PI).ln() + quad)
                - comp.log_det_half;
            log_w.push((mix.weights[k].max(f64::MIN_POSITIVE)).ln() + logpdf);
            means.push(comp.mu_target + comp.cross.dot(&solved));
            sds.push(comp.cond_sd);
        }
        let mx = log_w.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut weights: Vec<f64> = log_w.iter().map(|lw| (lw - mx).exp()).collect();
        let total: f64 = weights.iter().sum();
        for w in weights.iter_mut() {
            *w /= total;
        }
        UnivariateMixture { weights, means, sds }
    }
}

/// Conditional mixture of the target under a distress configuration:
/// distressed coordinates at their tau*-VaR, the rest at their medians.
pub fn conditional_mixture(
    mix: &PredictiveMixture,
    config: &DistressConfig,
) -> Result<UnivariateMixture> {
    let p = mix.n_outcomes();
    let mut coords = Vec::with_capacity(p - 1);
    let mut values = Vec::with_capacity(p - 1);
    for &j in &config.distress {
        coords.push(j);
        values.push(marginal_var(mix, j, config.tau_star)?);
    }
    for j in config.non_distress(p) {
        coords.push(j);
        values.push(marginal_var(mix, j, 0.5)?);
    }
    conditional_marginal(mix, config.target, &coords, &values)
}

/// Multivariate conditional VaR of the target at level tau.
pub fn mcovar(mix: &PredictiveMixture, config: &DistressConfig) -> Result<f64> {
    conditional_mixture(mix, config)?.upper_quantile(config.tau)
}

/// Multivariate conditional expected shortfall of the target at level tau.
pub fn mcoes(mix: &PredictiveMixture, config: &DistressConfig) -> Result<f64> {
    let cond = conditional_mixture(mix, config)?;
    let var = cond.upper_quantile(config.tau)?;
    Ok(cond.tail_expectation(var))
}

/// Which conditional measure drives the Shapley decomposition.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RiskMeasure {
    Mcovar,
    Mcoes,
}

/// Standardized Shapley risk attributions at one time point: entry (i, j) is
/// coordinate j's averaged marginal contribution to the risk of i, divided
/// by i's predictive standard deviation. The diagonal is zero
/// (self-contribution is undefined).
#[derive(Debug, Clone)]
pub struct ShapleyMatrix {
    pub t: usize,
    pub values: Array2<f64>,
    /// Marginal predictive standard deviations used for standardization.
    pub sd: Vec<f64>,
}

/// Exact Shapley decomposition by subset enumeration over all distress
/// configurations (capped at p = 12 coordinates).
pub fn shapley_at(
    mix: &PredictiveMixture,
    tau: f64,
    tau_star: f64,
    measure: RiskMeasure,
) -> Result<ShapleyMatrix> {
    let p = mix.n_outcomes();
    if p > MAX_SHAPLEY_DIM {
        return Err(HsvarError::input(format!(
            "exact Shapley enumeration is limited to p <= {MAX_SHAPLEY_DIM}, got {p}"
        )));
    }

    // Factorials up to 11 are exact in f64.
    let mut fact = vec![1.0f64; p + 1];
    for i in 1..=p {
        fact[i] = fact[i - 1] * i as f64;
    }

    // Conditioning values shared across all configurations.
    let mut distress_value = vec![0.0; p];
    let mut median_value = vec![0.0; p];
    for j in 0..p {
        distress_value[j] = marginal_var(mix, j, tau_star)?;
        median_value[j] = marginal_var(mix, j, 0.5)?;
    }

    let mut values = Array2::zeros((p, p));
    let mut sd = vec![0.0; p];
    for i in 0..p {
        sd[i] = mix.marginal(i).variance().sqrt();
        let others: Vec<usize> = (0..p).filter(|&j| j != i).collect();
        let n_others = others.len();
        if n_others == 0 {
            continue;
        }
        let family = ConditionalFamily::new(mix, i, &others)?;

        // eta over every distress mask of the other coordinates.
        let n_masks = 1usize << n_others;
        let mut eta = vec![0.0; n_masks];
        let mut cond_values = vec![0.0; n_others];
        for (mask, slot) in eta.iter_mut().enumerate() {
            for (b, &j) in others.iter().enumerate() {
                cond_values[b] = if mask & (1 << b) != 0 {
                    distress_value[j]
                } else {
                    median_value[j]
                };
            }
            let cond = family.mixture_for(mix, &cond_values);
            let var = cond.upper_quantile(tau)?;
            *slot = match measure {
                RiskMeasure::Mcovar => var,
                RiskMeasure::Mcoes => cond.tail_expectation(var),
            };
        }

        for (b, &j) in others.iter().enumerate() {
            let bit = 1usize << b;
            let mut total = 0.0;
            for mask in 0..n_masks {
                if mask & bit != 0 {
                    continue;
                }
                let h_size = (mask as u32).count_ones() as usize;
                // v(H) = |H|! (p - 1 - |H| - 1)! / (p - 1)!
                let v = fact[h_size] * fact[n_others - h_size - 1] / fact[n_others];
                total += v * (eta[mask | bit] - eta[mask]);
            }
            values[[i, j]] = total / sd[i];
        }
    }

    Ok(ShapleyMatrix {
        t: mix.t,
        values,
        sd,
    })
}

/// Shapley matrix at time t of a fitted model.
pub fn shapley(
    t: usize,
    data: &Dataset,
    params: &ModelParams,
    tau: f64,
    tau_star: f64,
    measure: RiskMeasure,
) -> Result<ShapleyMatrix> {
    let mix = predictive_mixture(t, data, params)?;
    shapley_at(&mix, tau, tau_star, measure)
}

/// Settings of a full risk-series evaluation.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct RiskConfig {
    pub tau: f64,
    pub tau_star: f64,
    pub measure: RiskMeasure,
    /// Compute per-time Shapley matrices (the expensive part).
    pub with_shapley: bool,
}

impl Default for RiskConfig {
    fn default() -> Self {
        RiskConfig {
            tau: 0.05,
            tau_star: 0.05,
            measure: RiskMeasure::Mcovar,
            with_shapley: true,
        }
    }
}

/// Per-time risk metrics: marginal VaR/ES, fully-distressed MCoVaR/MCoES
/// (all other coordinates in distress) and the Shapley matrix.
#[derive(Debug, Clone)]
pub struct RiskRow {
    pub t: usize,
    pub var: Vec<f64>,
    pub es: Vec<f64>,
    pub mcovar: Vec<f64>,
    pub mcoes: Vec<f64>,
    pub sd: Vec<f64>,
    pub shapley: Option<Array2<f64>>,
}

/// Evaluates the risk measures at every usable time. Rows are independent
/// and computed in parallel, ordered by t.
pub fn risk_series(
    data: &Dataset,
    params: &ModelParams,
    config: &RiskConfig,
) -> Result<Vec<RiskRow>> {
    if !(0.0 < config.tau && config.tau <= 0.5) || !(0.0 < config.tau_star && config.tau_star <= 0.5)
    {
        return Err(HsvarError::input("tau and tau* must lie in (0, 0.5]"));
    }
    let mixtures = predictive_mixtures(data, params)?;
    mixtures
        .par_iter()
        .map(|mix| {
            let p = mix.n_outcomes();
            let mut row = RiskRow {
                t: mix.t,
                var: vec![0.0; p],
                es: vec![0.0; p],
                mcovar: vec![0.0; p],
                mcoes: vec![0.0; p],
                sd: vec![0.0; p],
                shapley: None,
            };
            for i in 0..p {
                let marg = mix.marginal(i);
                row.sd[i] = marg.variance().sqrt();
                row.var[i] = marg.upper_quantile(config.tau)?;
                row.es[i] = marg.tail_expectation(row.var[i]);
                let all_others: Vec<usize> = (0..p).filter(|&j| j != i).collect();
                let dc = DistressConfig::new(i, all_others, config.tau, config.tau_star)?;
                let cond = conditional_mixture(mix, &dc)?;
                row.mcovar[i] = cond.upper_quantile(config.tau)?;
                row.mcoes[i] = cond.tail_expectation(row.mcovar[i]);
            }
            if config.with_shapley {
                row.shapley =
                    Some(shapley_at(mix, config.tau, config.tau_star, config.measure)?.values);
            }
            Ok(row)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn single_gaussian(mu: f64, sd: f64) -> PredictiveMixture {
        PredictiveMixture {
            t: 0,
            weights: vec![1.0],
            means: vec![array![mu]],
            covs: vec![array![[sd * sd]]],
        }
    }

    fn two_component_p3() -> PredictiveMixture {
        PredictiveMixture {
            t: 0,
            weights: vec![0.6, 0.4],
            means: vec![array![0.0, 1.0, -0.5], array![2.0, -1.0, 0.5]],
            covs: vec![
                array![[1.0, 0.3, 0.2], [0.3, 1.2, -0.1], [0.2, -0.1, 0.8]],
                array![[0.7, -0.2, 0.1], [-0.2, 0.9, 0.3], [0.1, 0.3, 1.1]],
            ],
        }
    }

    #[test]
    fn var_of_single_gaussian() {
        let mix = single_gaussian(0.0, 1.0);
        // tau = 0.5 -> the mean.
        let med = marginal_var(&mix, 0, 0.5).unwrap();
        assert!(med.abs() < 1e-8);
        // tau = 0.05 -> the 95% quantile of the standard normal.
        let v = marginal_var(&mix, 0, 0.05).unwrap();
        assert!((v - 1.6449).abs() < 1e-4, "VaR {v}");
    }

    #[test]
    fn es_of_standard_gaussian() {
        let mix = single_gaussian(0.0, 1.0);
        let es = marginal_es(&mix, 0, 0.05).unwrap();
        assert!((es - 2.0627).abs() < 1e-3, "ES {es}");
    }

    #[test]
    fn es_dominates_var() {
        let mix = two_component_p3();
        for i in 0..3 {
            for tau in [0.01, 0.05, 0.2, 0.5] {
                let v = marginal_var(&mix, i, tau).unwrap();
                let e = marginal_es(&mix, i, tau).unwrap();
                assert!(e >= v, "ES {e} < VaR {v} at tau {tau}");
            }
        }
    }

    #[test]
    fn var_is_monotone_in_tau() {
        let mix = two_component_p3();
        let mut last = f64::INFINITY;
        for tau in [0.01, 0.05, 0.1, 0.25, 0.5] {
            let v = marginal_var(&mix, 1, tau).unwrap();
            assert!(v <= last + 1e-9);
            last = v;
        }
    }

    #[test]
    fn empty_conditioning_is_identity() {
        let mix = two_component_p3();
        let cond = conditional_marginal(&mix, 0, &[], &[]).unwrap();
        let marg = mix.marginal(0);
        assert_eq!(cond.weights, marg.weights);
        assert_eq!(cond.means, marg.means);
        assert_eq!(cond.sds, marg.sds);
    }

    #[test]
    fn diagonal_equal_mean_conditioning_is_neutral() {
        // Diagonal covariances and equal component means in the conditioned
        // coordinates: conditioning must not change the target's mixture.
        let mix = PredictiveMixture {
            t: 0,
            weights: vec![0.5, 0.5],
            means: vec![array![1.0, 3.0, -2.0], array![-1.0, 3.0, -2.0]],
            covs: vec![
                Array2::from_diag(&array![1.0, 2.0, 0.5]),
                Array2::from_diag(&array![0.8, 2.0, 0.5]),
            ],
        };
        let cond = conditional_marginal(&mix, 0, &[1, 2], &[4.0, -1.0]).unwrap();
        let marg = mix.marginal(0);
        for k in 0..2 {
            assert!((cond.weights[k] - marg.weights[k]).abs() < 1e-12);
            assert!((cond.means[k] - marg.means[k]).abs() < 1e-12);
            assert!((cond.sds[k] - marg.sds[k]).abs() < 1e-12);
        }
    }

    #[test]
    fn full_distress_equals_mcovar_of_all_others() {
        let mix = two_component_p3();
        let config = DistressConfig::new(0, vec![1, 2], 0.05, 0.05).unwrap();
        let v = mcovar(&mix, &config).unwrap();
        let e = mcoes(&mix, &config).unwrap();
        assert!(e >= v);
    }

    #[test]
    fn positive_dependence_raises_mcovar() {
        // Strong positive correlation: distressing coordinate 1 must raise
        // the conditional VaR of coordinate 0 above the all-median baseline.
        let mix = PredictiveMixture {
            t: 0,
            weights: vec![1.0],
            means: vec![array![0.0, 0.0]],
            covs: vec![array![[1.0, 0.8], [0.8, 1.0]]],
        };
        let distressed = DistressConfig::new(0, vec![1], 0.05, 0.05).unwrap();
        let baseline = DistressConfig::new(0, vec![], 0.05, 0.05).unwrap();
        let v_distress = mcovar(&mix, &distressed).unwrap();
        let v_base = mcovar(&mix, &baseline).unwrap();
        assert!(
            v_distress > v_base + 0.5,
            "distress {v_distress} vs baseline {v_base}"
        );
    }

    #[test]
    fn shapley_subset_weights_sum_to_one() {
        for p in 2..=6usize {
            let n_others = p - 1;
            let mut fact = vec![1.0f64; p + 1];
            for i in 1..=p {
                fact[i] = fact[i - 1] * i as f64;
            }
            // Sum of v(H) over subsets H of the p-2 coordinates other than
            // (i, j).
            let mut total = 0.0;
            let free = n_others - 1;
            for mask in 0..(1usize << free) {
                let h = (mask as u32).count_ones() as usize;
                total += fact[h] * fact[n_others - h - 1] / fact[n_others];
            }
            assert!((total - 1.0).abs() < 1e-12, "p = {p}: weights sum {total}");
        }
    }

    #[test]
    fn shapley_p2_single_term() {
        let mix = PredictiveMixture {
            t: 0,
            weights: vec![0.7, 0.3],
            means: vec![array![0.0, 1.0], array![1.5, -0.5]],
            covs: vec![
                array![[1.0, 0.4], [0.4, 0.9]],
                array![[0.6, -0.2], [-0.2, 1.3]],
            ],
        };
        let sh = shapley_at(&mix, 0.05, 0.05, RiskMeasure::Mcovar).unwrap();
        // p = 2: the value is (eta({j}) - eta({})) / sd.
        let with = mcovar(&mix, &DistressConfig::new(0, vec![1], 0.05, 0.05).unwrap()).unwrap();
        let without = mcovar(&mix, &DistressConfig::new(0, vec![], 0.05, 0.05).unwrap()).unwrap();
        let sd0 = mix.marginal(0).variance().sqrt();
        assert!((sh.values[[0, 1]] - (with - without) / sd0).abs() < 1e-10);
        assert_eq!(sh.values[[0, 0]], 0.0);
    }

    #[test]
    fn shapley_efficiency_identity() {
        let mix = two_component_p3();
        for measure in [RiskMeasure::Mcovar, RiskMeasure::Mcoes] {
            let sh = shapley_at(&mix, 0.05, 0.05, measure).unwrap();
            for i in 0..3 {
                let others: Vec<usize> = (0..3).filter(|&j| j != i).collect();
                let full = DistressConfig::new(i, others, 0.05, 0.05).unwrap();
                let none = DistressConfig::new(i, vec![], 0.05, 0.05).unwrap();
                let (eta_full, eta_none) = match measure {
                    RiskMeasure::Mcovar => {
                        (mcovar(&mix, &full).unwrap(), mcovar(&mix, &none).unwrap())
                    }
                    RiskMeasure::Mcoes => {
                        (mcoes(&mix, &full).unwrap(), mcoes(&mix, &none).unwrap())
                    }
                };
                let total: f64 = (0..3).map(|j| sh.sd[i] * sh.values[[i, j]]).sum();
                assert!(
                    (total - (eta_full - eta_none)).abs() < 1e-8,
                    "efficiency violated for i = {i}: {total} vs {}",
                    eta_full - eta_none
                );
            }
        }
    }

    #[test]
    fn shapley_rejects_large_p() {
        let p = 13;
        let mix = PredictiveMixture {
            t: 0,
            weights: vec![1.0],
            means: vec![Array1::zeros(p)],
            covs: vec![Array2::eye(p)],
        };
        assert!(shapley_at(&mix, 0.05, 0.05, RiskMeasure::Mcovar).is_err());
    }

    #[test]
    fn mixture_cdf_monotone_on_grid() {
        let mix = two_component_p3();
        let marg = mix.marginal(2);
        let mut last = -1.0;
        for step in 0..200 {
            let x = -8.0 + step as f64 * 0.08;
            let c = marg.cdf(x);
            assert!(c >= last - 1e-14);
            assert!((0.0..=1.0).contains(&c));
            last = c;
        }
    }
}
