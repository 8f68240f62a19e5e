//! Run configuration: a single TOML file declaring column roles, model
//! dimensions, grids, seeds and output settings.

use crate::error::{CliError, Result};
use hsvar_core::{LinkFn, RiskMeasure};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub data: Option<DataConfig>,
    pub model: ModelConfig,
    #[serde(default)]
    pub penalty: PenaltyGrid,
    #[serde(default)]
    pub em: EmSettings,
    #[serde(default)]
    pub bootstrap: BootstrapSettings,
    #[serde(default)]
    pub risk: RiskSettings,
    #[serde(default)]
    pub simulate: Option<SimulateSettings>,
    #[serde(default)]
    pub input: InputSettings,
    pub output: OutputSettings,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub path: PathBuf,
    #[serde(default = "default_delimiter")]
    pub delimiter: String,
    pub time_column: String,
    pub outcome_columns: Vec<String>,
    #[serde(default)]
    pub emission_covariate_columns: Vec<String>,
    #[serde(default)]
    pub hazard_covariate_columns: Vec<String>,
    #[serde(default)]
    pub log_transform_outcomes: bool,
    /// Derive a weekend indicator from a date-typed time column and append
    /// it to the emission covariates.
    #[serde(default)]
    pub weekend_covariate: bool,
}

fn default_delimiter() -> String {
    ",".into()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub k_grid: Vec<usize>,
    pub h: usize,
    pub m: usize,
    #[serde(default = "default_link")]
    pub link: LinkFn,
}

fn default_link() -> LinkFn {
    LinkFn::Cloglog
}

/// Baseline-penalty grid: either explicit values or a log-spaced rule, with
/// zero prepended by default.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PenaltyGrid {
    #[serde(default)]
    pub lambda0_grid: Option<Vec<f64>>,
    #[serde(default)]
    pub log_spaced: Option<LogSpacedGrid>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LogSpacedGrid {
    pub min: f64,
    pub max: f64,
    pub count: usize,
    #[serde(default = "default_true")]
    pub include_zero: bool,
}

fn default_true() -> bool {
    true
}

impl Default for PenaltyGrid {
    fn default() -> Self {
        PenaltyGrid {
            lambda0_grid: None,
            log_spaced: None,
        }
    }
}

impl PenaltyGrid {
    pub fn values(&self) -> Result<Vec<f64>> {
        if let Some(values) = &self.lambda0_grid {
            if values.is_empty() {
                return Err(CliError::input("penalty.lambda0_grid is empty"));
            }
            if values.iter().any(|v| *v < 0.0 || !v.is_finite()) {
                return Err(CliError::input("lambda0 values must be finite and >= 0"));
            }
            return Ok(values.clone());
        }
        if let Some(rule) = &self.log_spaced {
            if rule.count == 0 || rule.min <= 0.0 || rule.max < rule.min {
                return Err(CliError::input("invalid log-spaced penalty rule"));
            }
            let mut grid = if rule.include_zero { vec![0.0] } else { vec![] };
            grid.extend(hsvar_core::em::log_spaced(rule.min, rule.max, rule.count));
            return Ok(grid);
        }
        // Paper-style default: zero plus 20 log-spaced values.
        Ok(hsvar_core::em::default_lambda_grid())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmSettings {
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
    #[serde(default = "default_tol")]
    pub tol: f64,
}

fn default_seeds() -> Vec<u64> {
    vec![0, 1]
}
fn default_max_iter() -> usize {
    hsvar_core::em::EM_MAX_ITER
}
fn default_tol() -> f64 {
    hsvar_core::em::EM_TOL
}

impl Default for EmSettings {
    fn default() -> Self {
        EmSettings {
            seeds: default_seeds(),
            max_iter: default_max_iter(),
            tol: default_tol(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BootstrapSettings {
    #[serde(default = "default_replicas")]
    pub replicas: usize,
    #[serde(default = "default_boot_seed")]
    pub seed: u64,
}

fn default_replicas() -> usize {
    300
}
fn default_boot_seed() -> u64 {
    9000
}

impl Default for BootstrapSettings {
    fn default() -> Self {
        BootstrapSettings {
            replicas: default_replicas(),
            seed: default_boot_seed(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RiskSettings {
    #[serde(default = "default_tau")]
    pub tau: f64,
    #[serde(default = "default_tau")]
    pub tau_star: f64,
    #[serde(default = "default_measure")]
    pub measure: RiskMeasure,
    #[serde(default = "default_true")]
    pub shapley: bool,
}

fn default_tau() -> f64 {
    0.05
}
fn default_measure() -> RiskMeasure {
    RiskMeasure::Mcovar
}

impl Default for RiskSettings {
    fn default() -> Self {
        RiskSettings {
            tau: default_tau(),
            tau_star: default_tau(),
            measure: default_measure(),
            shapley: true,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateSettings {
    /// Bundled scenario name: two_state, three_state or app_like.
    pub scenario: String,
    #[serde(default)]
    pub t_len: Option<usize>,
    #[serde(default)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputSettings {
    /// Previous run directory whose fitted model (model.json) is reused by
    /// bootstrap / risk / segment instead of refitting.
    #[serde(default)]
    pub model_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSettings {
    pub directory: PathBuf,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::input(format!("cannot read config {}: {e}", path.display())))?;
        let config: RunConfig = toml::from_str(&text)
            .map_err(|e| CliError::input(format!("config parse error: {e}")))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if self.model.k_grid.is_empty() {
            return Err(CliError::input("model.k_grid is empty"));
        }
        if self.model.k_grid.iter().any(|&k| k == 0) {
            return Err(CliError::input("model.k_grid entries must be >= 1"));
        }
        if self.model.m == 0 {
            return Err(CliError::input("model.m must be >= 1"));
        }
        if let Some(data) = &self.data {
            if data.delimiter.chars().count() != 1 {
                return Err(CliError::input("data.delimiter must be a single character"));
            }
            if data.outcome_columns.is_empty() {
                return Err(CliError::input("data.outcome_columns is empty"));
            }
        }
        if self.em.seeds.is_empty() {
            return Err(CliError::input("em.seeds is empty"));
        }
        self.penalty.values()?;
        Ok(())
    }

    pub fn data_required(&self) -> Result<&DataConfig> {
        self.data
            .as_ref()
            .ok_or_else(|| CliError::input("this command needs a [data] section"))
    }

    pub fn em_config(&self) -> hsvar_core::EmConfig {
        let mut config =
            hsvar_core::EmConfig::new(self.model.h, self.model.m, self.model.link);
        config.max_iter = self.em.max_iter;
        config.tol = self.em.tol;
        config
    }
}
