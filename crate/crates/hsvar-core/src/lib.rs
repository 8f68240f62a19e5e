//! Maximum-likelihood inference for a nonhomogeneous hidden semi-Markov
//! model with state-dependent, L1-penalized VAR Gaussian emissions, plus the
//! dynamic multivariate risk analytics defined on the fitted model.
//!
//! The hidden chain switches between K latent regimes whose sojourn times
//! follow covariate-driven discrete hazards; observations follow a
//! state-dependent VAR(H) with exogenous covariates. Estimation is a
//! penalized EM on the expanded (state, dwell) chain, model choice is scored
//! by a completed-likelihood criterion over a (K, lambda0) grid, uncertainty
//! comes from a parametric bootstrap, and the fitted model feeds per-time
//! Gaussian-mixture risk measures (VaR, ES, MCoVaR, MCoES) with standardized
//! Shapley attribution.

pub mod em;
pub mod emission;
pub mod error;
pub mod hidden;
pub mod model;
pub mod risk;
pub mod scenarios;
pub mod sim;

pub use em::{fit, grid_select, EmConfig, FitResult, GridCell, GridSelection};
pub use emission::{
    conditional_mean, covariance_update, emission_loglik, relaxed_refit, stability_check,
    weighted_lasso_fit, PenaltyConfig, StabilityReport, VarParams,
};
pub use error::{HsvarError, Result};
pub use hidden::{
    dwell_pmf, filtering_weights, forward_backward, hazard, map_segmentation, transition_matrix,
    ExpandedChain, HazardParams, InitialDistribution, LinkFn, Posteriors, SwitchMatrix,
};
pub use model::{Dataset, Dims, ModelParams, TimeIndex};
pub use risk::{
    conditional_mixture, marginal_es, marginal_var, mcoes, mcovar, predictive_mixture, risk_series,
    shapley, DistressConfig, PredictiveMixture, RiskConfig, RiskMeasure, RiskRow, ShapleyMatrix,
};
pub use scenarios::Scenario;
pub use sim::{
    adjusted_rand_index, parametric_bootstrap, simulate, BootstrapGrid, BootstrapResult,
    CovariateSpec, SimConfig, SimOutput,
};
