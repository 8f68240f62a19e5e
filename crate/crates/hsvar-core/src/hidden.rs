//! The nonhomogeneous semi-Markov hidden process.
//!
//! Dwell behavior is parameterized through a discrete hazard: the probability
//! of leaving state k after d steps is a GLM of the dwell time and
//! time-varying covariates,
//!
//! ```text
//! g(q_k(d, z_t)) = beta0_k + beta1_k * d + z_t' beta2_k
//! ```
//!
//! with g the complementary log-log (or logit) link. The chain is handled
//! through its expanded-HMM representation on (state, dwell) pairs up to a
//! truncation m, with a geometric tail beyond m implemented as a self-loop
//! at dwell m. Forward-backward runs on the expansion with per-step
//! normalization, so no probability ever underflows.

use crate::error::{HsvarError, Result};
use crate::model::{Dataset, ModelParams};
use ndarray::{Array1, Array2, Array3, ArrayView1};
use serde::{Deserialize, Serialize};

/// Hazards are clamped to [EPS, 1-EPS] to keep the Bernoulli block of the
/// M-step finite and to rule out absorbing numerical states.
pub const HAZARD_EPS: f64 = 1e-10;

/// Link function for the discrete-hazard regression.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LinkFn {
    Cloglog,
    Logit,
}

impl LinkFn {
    /// Inverse link: linear predictor -> probability.
    pub fn inverse(self, eta: f64) -> f64 {
        match self {
            LinkFn::Cloglog => 1.0 - (-eta.exp()).exp(),
            LinkFn::Logit => 1.0 / (1.0 + (-eta).exp()),
        }
    }

    /// Link: probability -> linear predictor.
    pub fn apply(self, q: f64) -> f64 {
        match self {
            LinkFn::Cloglog => (-(1.0 - q).ln()).ln(),
            LinkFn::Logit => (q / (1.0 - q)).ln(),
        }
    }

    /// Derivative dq/deta of the inverse link at linear predictor `eta`.
    pub fn inverse_deriv(self, eta: f64) -> f64 {
        match self {
            LinkFn::Cloglog => (eta - eta.exp()).exp(),
            LinkFn::Logit => {
                let q = self.inverse(eta);
                q * (1.0 - q)
            }
        }
    }

    /// Fused evaluation of (q clamped, dq/deta) sharing the exp calls.
    pub(crate) fn inverse_and_deriv(self, eta: f64) -> (f64, f64) {
        match self {
            LinkFn::Cloglog => {
                let u = eta.exp();
                let e = (-u).exp();
                ((1.0 - e).clamp(HAZARD_EPS, 1.0 - HAZARD_EPS), u * e)
            }
            LinkFn::Logit => {
                let q = 1.0 / (1.0 + (-eta).exp());
                (q.clamp(HAZARD_EPS, 1.0 - HAZARD_EPS), q * (1.0 - q))
            }
        }
    }
}

/// Per-state discrete-hazard regression coefficients.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HazardParams {
    /// Per-state intercept.
    pub beta0: Vec<f64>,
    /// Per-state dwell-time slope.
    pub beta1: Vec<f64>,
    /// K x L matrix of hazard-covariate coefficients.
    pub beta2: Array2<f64>,
    pub link: LinkFn,
}

impl HazardParams {
    /// All-zero coefficients for `k` states and `l` covariates.
    pub fn zeros(k: usize, l: usize, link: LinkFn) -> Self {
        HazardParams {
            beta0: vec![0.0; k],
            beta1: vec![0.0; k],
            beta2: Array2::zeros((k, l)),
            link,
        }
    }

    pub fn n_states(&self) -> usize {
        self.beta0.len()
    }

    pub fn validate(&self, k: usize, l: usize) -> Result<()> {
        if self.beta0.len() != k || self.beta1.len() != k || self.beta2.nrows() != k {
            return Err(HsvarError::input(format!(
                "hazard coefficients sized for {} states, expected {}",
                self.beta0.len(),
                k
            )));
        }
        if self.beta2.ncols() != l {
            return Err(HsvarError::input(format!(
                "hazard covariate coefficients have length {}, expected {}",
                self.beta2.ncols(),
                l
            )));
        }
        Ok(())
    }
}

/// Probability of leaving state `state` at dwell `d` given hazard covariates `z`.
///
/// Returns the inverse link of `beta0 + beta1 * d + z' beta2`, clamped to
/// `[HAZARD_EPS, 1 - HAZARD_EPS]`.
pub fn hazard(d: usize, z: ArrayView1<f64>, state: usize, params: &HazardParams) -> Result<f64> {
    if d == 0 {
        return Err(HsvarError::input("dwell time must be >= 1"));
    }
    if z.len() != params.beta2.ncols() {
        return Err(HsvarError::input(format!(
            "hazard covariate vector has length {}, expected {}",
            z.len(),
            params.beta2.ncols()
        )));
    }
    let mut eta = params.beta0[state] + params.beta1[state] * d as f64;
    for (zv, b) in z.iter().zip(params.beta2.row(state).iter()) {
        eta += zv * b;
    }
    Ok(params
        .link
        .inverse(eta)
        .clamp(HAZARD_EPS, 1.0 - HAZARD_EPS))
}

/// Dwell-time pmf induced by the hazard along a path of covariate profiles:
/// `p_k(d) = q_k(d) * prod_{delta < d} (1 - q_k(delta))`.
///
/// `z_path` must supply one covariate vector per dwell index `1..=d_max`.
pub fn dwell_pmf(
    state: usize,
    params: &HazardParams,
    z_path: &Array2<f64>,
    d_max: usize,
) -> Result<Array1<f64>> {
    if d_max == 0 {
        return Err(HsvarError::input("d_max must be >= 1"));
    }
    if z_path.nrows() < d_max {
        return Err(HsvarError::input(format!(
            "z_path has {} rows, need {}",
            z_path.nrows(),
            d_max
        )));
    }
    let mut pmf = Array1::zeros(d_max);
    let mut survival = 1.0;
    for d in 1..=d_max {
        let q = hazard(d, z_path.row(d - 1), state, params)?;
        pmf[d - 1] = q * survival;
        survival *= 1.0 - q;
    }
    Ok(pmf)
}

/// Conditional switching matrix: given a departure from state k, row k is the
/// distribution over destination states (diagonal fixed at zero).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SwitchMatrix {
    pub omega: Array2<f64>,
}

impl SwitchMatrix {
    /// K = 2 switching is deterministic: the row-reversed identity.
    pub fn row_reversed_identity() -> Self {
        SwitchMatrix {
            omega: ndarray::array![[0.0, 1.0], [1.0, 0.0]],
        }
    }

    /// Uniform distribution over the K-1 destination states.
    pub fn uniform(k: usize) -> Self {
        let mut omega = Array2::zeros((k, k));
        if k > 1 {
            let off = 1.0 / (k - 1) as f64;
            for a in 0..k {
                for b in 0..k {
                    if a != b {
                        omega[[a, b]] = off;
                    }
                }
            }
        }
        SwitchMatrix { omega }
    }

    pub fn validate(&self, k: usize) -> Result<()> {
        if self.omega.nrows() != k || self.omega.ncols() != k {
            return Err(HsvarError::input(format!(
                "switching matrix is {}x{}, expected {}x{}",
                self.omega.nrows(),
                self.omega.ncols(),
                k,
                k
            )));
        }
        for a in 0..k {
            if self.omega[[a, a]] != 0.0 {
                return Err(HsvarError::input(format!(
                    "switching matrix diagonal must be exactly 0 (row {a})"
                )));
            }
            // With a single state there are no transitions to distribute.
            if k > 1 {
                let s: f64 = self.omega.row(a).sum();
                if (s - 1.0).abs() > 1e-12 {
                    return Err(HsvarError::input(format!(
                        "switching matrix row {a} sums to {s}, expected 1"
                    )));
                }
            }
        }
        if k == 2 {
            let expect = SwitchMatrix::row_reversed_identity();
            if self.omega != expect.omega {
                return Err(HsvarError::input(
                    "for K = 2 the switching matrix is fixed to the row-reversed identity",
                ));
            }
        }
        Ok(())
    }
}

/// Initial distribution over states at t = 1.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InitialDistribution {
    pub pi: Vec<f64>,
}

impl InitialDistribution {
    pub fn uniform(k: usize) -> Self {
        InitialDistribution {
            pi: vec![1.0 / k as f64; k],
        }
    }

    pub fn validate(&self, k: usize) -> Result<()> {
        if self.pi.len() != k {
            return Err(HsvarError::input(format!(
                "initial distribution has length {}, expected {}",
                self.pi.len(),
                k
            )));
        }
        if self.pi.iter().any(|&p| p < 0.0) {
            return Err(HsvarError::input("initial distribution has negative entries"));
        }
        let s: f64 = self.pi.iter().sum();
        if (s - 1.0).abs() > 1e-12 {
            return Err(HsvarError::input(format!(
                "initial distribution sums to {s}, expected 1"
            )));
        }
        Ok(())
    }
}

/// Layout of the expanded chain on (state, dwell) pairs.
///
/// Super-state indices run over `k * m + (d - 1)` for state `k` in `0..K`
/// and dwell `d` in `1..=m`; the map is a bijection with `1..=K*m`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExpandedChain {
    pub k: usize,
    pub m: usize,
}

impl ExpandedChain {
    pub fn new(k: usize, m: usize) -> Result<Self> {
        if k == 0 || m == 0 {
            return Err(HsvarError::input("expanded chain needs k >= 1 and m >= 1"));
        }
        Ok(ExpandedChain { k, m })
    }

    pub fn n_superstates(&self) -> usize {
        self.k * self.m
    }

    /// Super-state index of (state, dwell), dwell 1-based.
    pub fn index(&self, state: usize, dwell: usize) -> usize {
        debug_assert!(state < self.k && dwell >= 1 && dwell <= self.m);
        state * self.m + (dwell - 1)
    }

    /// Inverse of [`ExpandedChain::index`].
    pub fn state_dwell(&self, super_state: usize) -> (usize, usize) {
        debug_assert!(super_state < self.n_superstates());
        (super_state / self.m, super_state % self.m + 1)
    }
}

/// Per-time transition matrix of the expanded chain.
///
/// From super-state (k, d): mass `1 - q_k(d, z_t)` moves to (k, min(d+1, m)),
/// and mass `q_k(d, z_t) * omega_kj` moves to (j, 1) for each j != k. With a
/// single state there is nowhere to switch to, so the whole mass advances the
/// dwell clock.
pub fn transition_matrix(
    hazard_params: &HazardParams,
    omega: &SwitchMatrix,
    z_t: ArrayView1<f64>,
    chain: &ExpandedChain,
) -> Result<Array2<f64>> {
    let n = chain.n_superstates();
    let mut gamma = Array2::zeros((n, n));
    for s in 0..n {
        let (k, d) = chain.state_dwell(s);
        let next_dwell = chain.index(k, (d + 1).min(chain.m));
        if chain.k == 1 {
            gamma[[s, next_dwell]] = 1.0;
            continue;
        }
        let q = hazard(d, z_t, k, hazard_params)?;
        gamma[[s, next_dwell]] += 1.0 - q;
        for j in 0..chain.k {
            if j != k {
                gamma[[s, chain.index(j, 1)]] += q * omega.omega[[k, j]];
            }
        }
    }
    Ok(gamma)
}

/// Smoothed posteriors and the pairwise aggregates needed by the M-step.
///
/// `stay[t, k, d]` / `leave[t, k, d]` are the posterior masses of surviving
/// in / leaving state k at dwell d on the transition into time t (row 0 is
/// zero); `switch[t, k, j]` aggregates the leave mass by destination.
#[derive(Debug, Clone)]
pub struct Posteriors {
    /// T x K x m smoothed super-state probabilities.
    pub uni: Array3<f64>,
    pub stay: Array3<f64>,
    pub leave: Array3<f64>,
    /// T x K x K switch masses (diagonal slices are zero).
    pub switch: Array3<f64>,
    /// Observed-data log-likelihood.
    pub loglik: f64,
}

impl Posteriors {
    pub fn n_rows(&self) -> usize {
        self.uni.shape()[0]
    }

    /// Smoothed state probabilities marginalized over dwell: T x K.
    pub fn state_probs(&self) -> Array2<f64> {
        let (t_len, k_len, _) = self.uni.dim();
        let mut probs = Array2::zeros((t_len, k_len));
        for t in 0..t_len {
            for k in 0..k_len {
                probs[[t, k]] = self.uni.index_axis(ndarray::Axis(0), t).row(k).sum();
            }
        }
        probs
    }

    /// Per-state average and maximum smoothed mass sitting at the truncation
    /// boundary d = m. Large values flag an inadequate truncation.
    pub fn truncation_mass(&self) -> Vec<TruncationDiagnostic> {
        let (t_len, k_len, m_len) = self.uni.dim();
        (0..k_len)
            .map(|k| {
                let mut max = 0.0f64;
                let mut sum = 0.0f64;
                for t in 0..t_len {
                    let v = self.uni[[t, k, m_len - 1]];
                    max = max.max(v);
                    sum += v;
                }
                TruncationDiagnostic {
                    state: k,
                    mean_mass_at_m: sum / t_len as f64,
                    max_mass_at_m: max,
                }
            })
            .collect()
    }
}

/// Smoothed mass at the dwell truncation boundary for one state.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct TruncationDiagnostic {
    pub state: usize,
    pub mean_mass_at_m: f64,
    pub max_mass_at_m: f64,
}

/// Sparse per-time transition structure reused by the recursions: for each
/// source (k, d), the survive probability and the hazard. Buffers are
/// refilled per time step to avoid reallocation inside the recursions.
struct StepKernel {
    /// K x m survive probabilities (1 - q).
    survive: Array2<f64>,
    /// K x m hazards q.
    hazard: Array2<f64>,
}

impl StepKernel {
    fn new(chain: &ExpandedChain) -> Self {
        StepKernel {
            survive: Array2::zeros((chain.k, chain.m)),
            hazard: Array2::zeros((chain.k, chain.m)),
        }
    }

    fn fill(
        &mut self,
        hazard_params: &HazardParams,
        z_t: ArrayView1<f64>,
        chain: &ExpandedChain,
    ) -> Result<()> {
        for k in 0..chain.k {
            // The linear predictor is affine in d; evaluate the covariate
            // part once per state.
            let mut base = hazard_params.beta0[k];
            for (zv, b) in z_t.iter().zip(hazard_params.beta2.row(k).iter()) {
                base += zv * b;
            }
            if z_t.len() != hazard_params.beta2.ncols() {
                return Err(HsvarError::input(format!(
                    "hazard covariate vector has length {}, expected {}",
                    z_t.len(),
                    hazard_params.beta2.ncols()
                )));
            }
            for d in 1..=chain.m {
                let q = if chain.k == 1 {
                    0.0
                } else {
                    let eta = base + hazard_params.beta1[k] * d as f64;
                    hazard_params
                        .link
                        .inverse(eta)
                        .clamp(HAZARD_EPS, 1.0 - HAZARD_EPS)
                };
                self.hazard[[k, d - 1]] = q;
                self.survive[[k, d - 1]] = 1.0 - q;
            }
        }
        Ok(())
    }
}

/// Scaled forward pass. Returns per-time normalized forward probabilities
/// over super-states (T x K x m), the per-step log normalizers, and the
/// per-time emission factors after a max-shift (T x K).
struct ForwardPass {
    alpha: Array3<f64>,
    log_norms: Vec<f64>,
    /// exp(loglik - rowmax) emission factors.
    b: Array2<f64>,
}

fn forward_pass(
    emission_loglik: &Array2<f64>,
    z: &Array2<f64>,
    params: &ModelParams,
    chain: &ExpandedChain,
) -> Result<ForwardPass> {
    let t_len = emission_loglik.nrows();
    let k_len = chain.k;
    let m_len = chain.m;

    if let Some(((t, k), v)) = emission_loglik
        .indexed_iter()
        .find(|(_, v)| !v.is_finite())
    {
        return Err(HsvarError::numerical(format!(
            "non-finite emission log-density {v} at time {t}, state {k}"
        )));
    }

    // Per-row max shift keeps exp() in range for very negative log-densities.
    let mut b = Array2::zeros((t_len, k_len));
    let mut shifts = vec![0.0; t_len];
    for t in 0..t_len {
        let row = emission_loglik.row(t);
        let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        shifts[t] = mx;
        for k in 0..k_len {
            b[[t, k]] = (row[k] - mx).exp();
        }
    }

    let mut alpha = Array3::zeros((t_len, k_len, m_len));
    let mut log_norms = vec![0.0; t_len];

    // The chain enters at dwell 1, so pi sits on (k, 1).
    let mut norm = 0.0;
    for k in 0..k_len {
        let v = params.pi.pi[k] * b[[0, k]];
        alpha[[0, k, 0]] = v;
        norm += v;
    }
    if norm <= 0.0 || !norm.is_finite() {
        return Err(HsvarError::numerical(
            "forward normalizer vanished at time 0",
        ));
    }
    alpha.index_axis_mut(ndarray::Axis(0), 0).mapv_inplace(|v| v / norm);
    log_norms[0] = norm.ln() + shifts[0];

    let mut acc = Array2::zeros((k_len, m_len));
    let mut kernel = StepKernel::new(chain);
    for t in 1..t_len {
        kernel.fill(&params.hazard, z.row(t), chain)?;
        acc.fill(0.0);
        for k in 0..k_len {
            let mut switched_out = 0.0;
            for d in 1..=m_len {
                let w = alpha[[t - 1, k, d - 1]];
                if w == 0.0 {
                    continue;
                }
                acc[[k, (d + 1).min(m_len) - 1]] += w * kernel.survive[[k, d - 1]];
                switched_out += w * kernel.hazard[[k, d - 1]];
            }
            if switched_out > 0.0 {
                for j in 0..k_len {
                    if j != k {
                        acc[[j, 0]] += switched_out * params.omega.omega[[k, j]];
                    }
                }
            }
        }
        let mut norm = 0.0;
        for k in 0..k_len {
            let bf = b[[t, k]];
            for d in 0..m_len {
                let v = acc[[k, d]] * bf;
                alpha[[t, k, d]] = v;
                norm += v;
            }
        }
        if norm <= 0.0 || !norm.is_finite() {
            return Err(HsvarError::numerical(format!(
                "forward normalizer vanished at time {t}"
            )));
        }
        alpha.index_axis_mut(ndarray::Axis(0), t).mapv_inplace(|v| v / norm);
        log_norms[t] = norm.ln() + shifts[t];
    }

    Ok(ForwardPass {
        alpha,
        log_norms,
        b,
    })
}

/// Exact smoothed inference on the expanded chain.
///
/// `emission_loglik` is T x K with the state-conditional log-density of each
/// observation; rows that only condition the VAR (the first H) must be zero
/// so they contribute no emission term. Returns smoothed univariate
/// probabilities, the stay/leave/switch aggregates consumed by the M-step,
/// and the observed-data log-likelihood accumulated from the per-step
/// normalizers.
pub fn forward_backward(
    data: &Dataset,
    params: &ModelParams,
    emission_loglik: &Array2<f64>,
) -> Result<Posteriors> {
    let chain = ExpandedChain::new(params.dims.k, params.dims.m)?;
    let t_len = emission_loglik.nrows();
    let k_len = chain.k;
    let m_len = chain.m;
    if t_len != data.n_rows() {
        return Err(HsvarError::input(format!(
            "emission log-likelihood has {} rows, dataset has {}",
            t_len,
            data.n_rows()
        )));
    }
    if emission_loglik.ncols() != k_len {
        return Err(HsvarError::input(format!(
            "emission log-likelihood has {} columns, expected {}",
            emission_loglik.ncols(),
            k_len
        )));
    }

    let fwd = forward_pass(emission_loglik, &data.z, params, &chain)?;
    let loglik: f64 = fwd.log_norms.iter().sum();

    let mut uni = Array3::zeros((t_len, k_len, m_len));
    let mut stay = Array3::zeros((t_len, k_len, m_len));
    let mut leave = Array3::zeros((t_len, k_len, m_len));
    let mut switch = Array3::zeros((t_len, k_len, k_len));

    // Scaled backward recursion, reusing the forward normalizers. beta here
    // is the conditional future likelihood ratio; at the horizon it is 1.
    let mut beta = Array2::from_elem((k_len, m_len), 1.0);
    for k in 0..k_len {
        for d in 0..m_len {
            uni[[t_len - 1, k, d]] = fwd.alpha[[t_len - 1, k, d]];
        }
    }

    let mut beta_next = Array2::zeros((k_len, m_len));
    let mut kernel = StepKernel::new(&chain);
    for t in (0..t_len - 1).rev() {
        kernel.fill(&params.hazard, data.z.row(t + 1), &chain)?;

        // Switch-destination aggregate: emission factor times beta at dwell 1.
        let mut to_dwell_one = vec![0.0; k_len];
        for j in 0..k_len {
            to_dwell_one[j] = fwd.b[[t + 1, j]] * beta[[j, 0]];
        }

        // norm_check accumulates sum_s alpha_t(s) * beta_unnormalized(s),
        // which telescopes to the raw normalizer of step t+1; dividing by it
        // keeps alpha .* beta a probability distribution at every t.
        let mut norm_check = 0.0;
        for k in 0..k_len {
            let mut switch_term = 0.0;
            if k_len > 1 {
                for j in 0..k_len {
                    if j != k {
                        switch_term += params.omega.omega[[k, j]] * to_dwell_one[j];
                    }
                }
            }
            for d in 1..=m_len {
                let d_next = (d + 1).min(m_len);
                let stay_term = kernel.survive[[k, d - 1]]
                    * fwd.b[[t + 1, k]]
                    * beta[[k, d_next - 1]];
                let v = stay_term + kernel.hazard[[k, d - 1]] * switch_term;
                beta_next[[k, d - 1]] = v;
                norm_check += v * fwd.alpha[[t, k, d - 1]];
            }
        }
        if norm_check <= 0.0 || !norm_check.is_finite() {
            return Err(HsvarError::numerical(format!(
                "backward normalizer vanished at time {t}"
            )));
        }
        beta_next.mapv_inplace(|v| v / norm_check);

        // Pairwise aggregates on the transition into t+1.
        for k in 0..k_len {
            let mut switched = vec![0.0; k_len];
            for d in 1..=m_len {
                let a = fwd.alpha[[t, k, d - 1]];
                if a == 0.0 {
                    continue;
                }
                let d_next = (d + 1).min(m_len);
                let stay_mass = a
                    * kernel.survive[[k, d - 1]]
                    * fwd.b[[t + 1, k]]
                    * beta[[k, d_next - 1]]
                    / norm_check;
                stay[[t + 1, k, d - 1]] = stay_mass;
                let mut leave_mass = 0.0;
                if k_len > 1 {
                    let q = kernel.hazard[[k, d - 1]];
                    for j in 0..k_len {
                        if j != k {
                            let mass =
                                a * q * params.omega.omega[[k, j]] * to_dwell_one[j] / norm_check;
                            leave_mass += mass;
                            switched[j] += mass;
                        }
                    }
                }
                leave[[t + 1, k, d - 1]] = leave_mass;
            }
            for j in 0..k_len {
                switch[[t + 1, k, j]] = switched[j];
            }
        }

        std::mem::swap(&mut beta, &mut beta_next);
        for k in 0..k_len {
            for d in 0..m_len {
                uni[[t, k, d]] = fwd.alpha[[t, k, d]] * beta[[k, d]];
            }
        }
    }

    Ok(Posteriors {
        uni,
        stay,
        leave,
        switch,
        loglik,
    })
}

/// One-step-ahead filtering probabilities psi[t, k] = P(state k at t | data
/// up to t-1). The first row uses the initial distribution as its prior.
pub fn filtering_weights(data: &Dataset, params: &ModelParams) -> Result<Array2<f64>> {
    let emission = crate::emission::emission_loglik(data, params)?;
    filtering_weights_from(data, params, &emission)
}

/// As [`filtering_weights`], reusing a precomputed emission matrix.
pub fn filtering_weights_from(
    data: &Dataset,
    params: &ModelParams,
    emission_loglik: &Array2<f64>,
) -> Result<Array2<f64>> {
    let chain = ExpandedChain::new(params.dims.k, params.dims.m)?;
    let fwd = forward_pass(emission_loglik, &data.z, params, &chain)?;
    let t_len = emission_loglik.nrows();
    let k_len = chain.k;
    let mut psi = Array2::zeros((t_len, k_len));
    for k in 0..k_len {
        psi[[0, k]] = params.pi.pi[k];
    }
    let mut kernel = StepKernel::new(&chain);
    for t in 1..t_len {
        kernel.fill(&params.hazard, data.z.row(t), &chain)?;
        for j in 0..k_len {
            let mut mass_out = 0.0;
            let mut mass_stay = 0.0;
            for d in 1..=chain.m {
                let a = fwd.alpha[[t - 1, j, d - 1]];
                mass_stay += a * kernel.survive[[j, d - 1]];
                mass_out += a * kernel.hazard[[j, d - 1]];
            }
            psi[[t, j]] += mass_stay;
            if k_len > 1 {
                for dest in 0..k_len {
                    if dest != j {
                        psi[[t, dest]] += mass_out * params.omega.omega[[j, dest]];
                    }
                }
            }
        }
    }
    Ok(psi)
}

/// MAP state labels from smoothed posteriors: argmax_k of the dwell-summed
/// probability, ties broken toward the lowest state index.
pub fn map_segmentation(posteriors: &Posteriors) -> Vec<usize> {
    let probs = posteriors.state_probs();
    probs
        .rows()
        .into_iter()
        .map(|row| {
            let mut best = 0;
            let mut best_v = row[0];
            for (k, &v) in row.iter().enumerate().skip(1) {
                if v > best_v {
                    best = k;
                    best_v = v;
                }
            }
            best
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn two_state_hazard() -> HazardParams {
        HazardParams {
            beta0: vec![-1.0, -2.0],
            beta1: vec![0.15, 0.35],
            beta2: array![[-0.5], [0.5]],
            link: LinkFn::Cloglog,
        }
    }

    #[test]
    fn hazard_at_zero_coefficients() {
        let params = HazardParams::zeros(2, 0, LinkFn::Cloglog);
        let z = Array1::zeros(0);
        let q = hazard(5, z.view(), 0, &params).unwrap();
        assert!((q - (1.0 - (-1.0f64).exp())).abs() < 1e-15);
    }

    #[test]
    fn hazard_scalar_evaluation() {
        // cloglog, beta0 = -1, beta1 = 0.15, beta2 = (-0.5), d = 1, z = (0)
        let params = HazardParams {
            beta0: vec![-1.0],
            beta1: vec![0.15],
            beta2: array![[-0.5]],
            link: LinkFn::Cloglog,
        };
        let z = array![0.0];
        let q = hazard(1, z.view(), 0, &params).unwrap();
        let expect = 1.0 - (-(-0.85f64).exp()).exp();
        assert!((q - expect).abs() < 1e-15, "q={q} expect={expect}");
    }

    #[test]
    fn hazard_clamps_at_eps() {
        let params = HazardParams {
            beta0: vec![-50.0],
            beta1: vec![0.0],
            beta2: Array2::zeros((1, 0)),
            link: LinkFn::Cloglog,
        };
        let z = Array1::zeros(0);
        let q = hazard(3, z.view(), 0, &params).unwrap();
        assert_eq!(q, HAZARD_EPS);
    }

    #[test]
    fn hazard_rejects_dimension_mismatch() {
        let params = two_state_hazard();
        let z = array![0.0, 1.0];
        assert!(hazard(1, z.view(), 0, &params).is_err());
    }

    #[test]
    fn dwell_pmf_constant_hazard_is_geometric() {
        // Constant hazard 0.5: pmf must equal 0.5, 0.25, 0.125, ...
        let params = HazardParams {
            beta0: vec![LinkFn::Cloglog.apply(0.5)],
            beta1: vec![0.0],
            beta2: Array2::zeros((1, 0)),
            link: LinkFn::Cloglog,
        };
        let z_path = Array2::zeros((8, 0));
        let pmf = dwell_pmf(0, &params, &z_path, 8).unwrap();
        // Sequential survival product matches the implementation exactly.
        let mut survival = 1.0;
        for d in 0..8 {
            let q = hazard(d + 1, z_path.row(d), 0, &params).unwrap();
            assert_eq!(pmf[d], q * survival);
            survival *= 1.0 - q;
        }
        // And the closed-form geometric values to high accuracy.
        for d in 0..8 {
            let expect = 0.5f64 * 0.5f64.powi(d as i32);
            assert!((pmf[d] - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn dwell_pmf_matches_survival_product_oracle() {
        // The oracle recomputes hazards from scratch and builds the pmf by
        // the explicit product recursion.
        let params = HazardParams {
            beta0: vec![-2.0],
            beta1: vec![0.35],
            beta2: Array2::zeros((1, 0)),
            link: LinkFn::Cloglog,
        };
        let z_path = Array2::zeros((30, 0));
        let pmf = dwell_pmf(0, &params, &z_path, 30).unwrap();
        let mut survival = 1.0;
        for d in 1..=30 {
            let eta: f64 = -2.0 + 0.35 * d as f64;
            let q = (1.0 - (-eta.exp()).exp()).clamp(HAZARD_EPS, 1.0 - HAZARD_EPS);
            assert!((pmf[d - 1] - q * survival).abs() < 1e-15);
            survival *= 1.0 - q;
        }
    }

    #[test]
    fn dwell_pmf_total_mass_with_geometric_tail() {
        // sum_{d<=d_max} p(d) + S(d_max) = 1, and the geometric tail at rate
        // q(d_max) carries exactly the surviving mass S(d_max).
        let params = two_state_hazard();
        let d_max = 40;
        let z_path = Array2::zeros((d_max, 1));
        for state in 0..2 {
            let pmf = dwell_pmf(state, &params, &z_path, d_max).unwrap();
            let head: f64 = pmf.sum();
            let survival_past: f64 = {
                let mut s = 1.0;
                for d in 1..=d_max {
                    s *= 1.0 - hazard(d, z_path.row(d - 1), state, &params).unwrap();
                }
                s
            };
            assert!((head + survival_past - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn transition_matrix_m1_reduces_to_markov() {
        let params = two_state_hazard();
        let omega = SwitchMatrix::row_reversed_identity();
        let chain = ExpandedChain::new(2, 1).unwrap();
        let z = array![0.3];
        let gamma = transition_matrix(&params, &omega, z.view(), &chain).unwrap();
        for k in 0..2 {
            let q = hazard(1, z.view(), k, &params).unwrap();
            assert!((gamma[[k, k]] - (1.0 - q)).abs() < 1e-15);
            assert!((gamma[[k, 1 - k]] - q).abs() < 1e-15);
        }
    }

    #[test]
    fn transition_matrix_hand_constructed_k2_m3() {
        let params = two_state_hazard();
        let omega = SwitchMatrix::row_reversed_identity();
        let chain = ExpandedChain::new(2, 3).unwrap();
        let z = array![0.0];
        let gamma = transition_matrix(&params, &omega, z.view(), &chain).unwrap();

        let q = |k: usize, d: usize| hazard(d, z.view(), k, &params).unwrap();
        let mut expect = Array2::zeros((6, 6));
        // State 0 rows: dwell advances within the first 3 indices.
        expect[[0, 1]] = 1.0 - q(0, 1);
        expect[[0, 3]] = q(0, 1);
        expect[[1, 2]] = 1.0 - q(0, 2);
        expect[[1, 3]] = q(0, 2);
        expect[[2, 2]] = 1.0 - q(0, 3); // self-loop at the truncation
        expect[[2, 3]] = q(0, 3);
        // State 1 rows.
        expect[[3, 4]] = 1.0 - q(1, 1);
        expect[[3, 0]] = q(1, 1);
        expect[[4, 5]] = 1.0 - q(1, 2);
        expect[[4, 0]] = q(1, 2);
        expect[[5, 5]] = 1.0 - q(1, 3);
        expect[[5, 0]] = q(1, 3);

        for a in 0..6 {
            for b in 0..6 {
                assert!(
                    (gamma[[a, b]] - expect[[a, b]]).abs() < 1e-15,
                    "mismatch at ({a},{b}): {} vs {}",
                    gamma[[a, b]],
                    expect[[a, b]]
                );
            }
        }
    }

    #[test]
    fn transition_matrix_rows_sum_to_one() {
        let params = two_state_hazard();
        let omega = SwitchMatrix::row_reversed_identity();
        let chain = ExpandedChain::new(2, 5).unwrap();
        for zval in [-1.5, 0.0, 2.0] {
            let z = array![zval];
            let gamma = transition_matrix(&params, &omega, z.view(), &chain).unwrap();
            for row in gamma.rows() {
                assert!((row.sum() - 1.0).abs() < 1e-12);
                assert!(row.iter().all(|&v| (0.0..=1.0).contains(&v)));
            }
        }
    }

    #[test]
    fn expanded_chain_index_bijection() {
        let chain = ExpandedChain::new(3, 7).unwrap();
        let mut seen = vec![false; chain.n_superstates()];
        for k in 0..3 {
            for d in 1..=7 {
                let s = chain.index(k, d);
                assert!(!seen[s]);
                seen[s] = true;
                assert_eq!(chain.state_dwell(s), (k, d));
            }
        }
        assert!(seen.iter().all(|&v| v));
    }

    #[test]
    fn map_segmentation_tie_breaks_low() {
        let mut uni = Array3::zeros((2, 2, 1));
        uni[[0, 0, 0]] = 0.5;
        uni[[0, 1, 0]] = 0.5;
        uni[[1, 0, 0]] = 0.1;
        uni[[1, 1, 0]] = 0.9;
        let post = Posteriors {
            uni,
            stay: Array3::zeros((2, 2, 1)),
            leave: Array3::zeros((2, 2, 1)),
            switch: Array3::zeros((2, 2, 2)),
            loglik: 0.0,
        };
        assert_eq!(map_segmentation(&post), vec![0, 1]);
    }
}
