//! Result emission: one directory per run, delimiter-separated tables with
//! round-trip-exact floats, and a JSON manifest carrying dims, seeds,
//! versions, the selection outcome and per-file checksums.

use crate::error::{CliError, Result};
use hsvar_core::{FitResult, ModelParams};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

/// 17 significant digits round-trip any f64 exactly.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

pub struct RunDir {
    pub path: PathBuf,
    files: BTreeMap<String, String>,
}

impl RunDir {
    /// Creates the run directory; an existing non-empty directory is only
    /// reused under `force`.
    pub fn create(path: &Path, force: bool) -> Result<Self> {
        if path.exists() {
            let occupied = std::fs::read_dir(path)
                .map_err(|e| CliError::input(format!("cannot read {}: {e}", path.display())))?
                .next()
                .is_some();
            if occupied && !force {
                return Err(CliError::input(format!(
                    "output directory {} is not empty (use --force to overwrite)",
                    path.display()
                )));
            }
        } else {
            std::fs::create_dir_all(path)
                .map_err(|e| CliError::input(format!("cannot create {}: {e}", path.display())))?;
        }
        Ok(RunDir {
            path: path.to_path_buf(),
            files: BTreeMap::new(),
        })
    }

    /// Writes a table file and records its checksum.
    pub fn write_table(&mut self, name: &str, content: &str) -> Result<()> {
        let path = self.path.join(name);
        let mut f = std::fs::File::create(&path)
            .map_err(|e| CliError::input(format!("cannot create {}: {e}", path.display())))?;
        f.write_all(content.as_bytes())
            .map_err(|e| CliError::input(format!("write failed for {name}: {e}")))?;
        let mut hasher = Sha256::new();
        hasher.update(content.as_bytes());
        self.files.insert(name.to_string(), hex(&hasher.finalize()));
        Ok(())
    }

    pub fn write_manifest(&mut self, manifest: &Manifest) -> Result<()> {
        let body = serde_json::to_string_pretty(&ManifestWithFiles {
            manifest,
            files: &self.files,
        })
        .map_err(|e| CliError::input(format!("manifest serialization failed: {e}")))?;
        let path = self.path.join("manifest.json");
        std::fs::write(&path, body)
            .map_err(|e| CliError::input(format!("cannot write manifest: {e}")))?;
        Ok(())
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Machine-readable run summary. Field order is fixed and no timestamps are
/// recorded, so identical runs produce byte-identical manifests.
#[derive(Debug, Serialize)]
pub struct Manifest {
    pub command: String,
    pub version: String,
    pub config: serde_json::Value,
    pub cli_seed: Option<u64>,
    pub dims: Option<hsvar_core::Dims>,
    pub columns: Option<ColumnsInfo>,
    pub selection: Option<SelectionInfo>,
    pub bootstrap: Option<BootstrapInfo>,
    pub risk: Option<RiskInfo>,
    pub error: Option<ErrorRecord>,
    pub exit_code: i32,
}

#[derive(Debug, Serialize)]
pub struct ColumnsInfo {
    pub time: String,
    pub outcomes: Vec<String>,
    pub emission_covariates: Vec<String>,
    pub hazard_covariates: Vec<String>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SelectionInfo {
    pub k: usize,
    pub lambda0: f64,
    pub seed: u64,
    pub icl: f64,
    pub loglik: f64,
    pub iterations: usize,
    pub converged: bool,
    pub stability: Vec<hsvar_core::emission::StateStability>,
    pub truncation: Vec<hsvar_core::hidden::TruncationDiagnostic>,
}

#[derive(Debug, Serialize)]
pub struct BootstrapInfo {
    pub requested: usize,
    pub completed: usize,
    pub failed: usize,
    pub k_reference: usize,
    pub level: f64,
}

#[derive(Debug, Serialize)]
pub struct RiskInfo {
    pub tau: f64,
    pub tau_star: f64,
    pub measure: hsvar_core::RiskMeasure,
    pub rows: usize,
}

#[derive(Debug, Serialize)]
pub struct ErrorRecord {
    pub kind: String,
    pub message: String,
}

#[derive(Serialize)]
struct ManifestWithFiles<'a> {
    #[serde(flatten)]
    manifest: &'a Manifest,
    files: &'a BTreeMap<String, String>,
}

impl Manifest {
    pub fn new(command: &str, config: &crate::config::RunConfig, cli_seed: Option<u64>) -> Self {
        Manifest {
            command: command.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            config: serde_json::to_value(config).unwrap_or(serde_json::Value::Null),
            cli_seed,
            dims: None,
            columns: None,
            selection: None,
            bootstrap: None,
            risk: None,
            error: None,
            exit_code: 0,
        }
    }
}

impl SelectionInfo {
    pub fn from_fit(fit: &FitResult) -> Self {
        SelectionInfo {
            k: fit.params.dims.k,
            lambda0: fit.lambda0,
            seed: fit.seed,
            icl: fit.icl,
            loglik: fit.posteriors.loglik,
            iterations: fit.iterations,
            converged: fit.converged,
            stability: hsvar_core::stability_check(&fit.params.var).states,
            truncation: fit.posteriors.truncation_mass(),
        }
    }
}

/// Serialized fitted model for reuse by later commands.
#[derive(Debug, Serialize, Deserialize)]
pub struct SavedModel {
    pub params: ModelParams,
    pub lambda0: f64,
    pub seed: u64,
    pub icl: f64,
    pub iterations: usize,
    pub converged: bool,
    pub outcome_names: Vec<String>,
}

impl SavedModel {
    pub fn from_fit(fit: &FitResult, outcome_names: &[String]) -> Self {
        SavedModel {
            params: fit.params.clone(),
            lambda0: fit.lambda0,
            seed: fit.seed,
            icl: fit.icl,
            iterations: fit.iterations,
            converged: fit.converged,
            outcome_names: outcome_names.to_vec(),
        }
    }

    pub fn save(&self, dir: &mut RunDir) -> Result<()> {
        let body = serde_json::to_string_pretty(self)
            .map_err(|e| CliError::input(format!("model serialization failed: {e}")))?;
        dir.write_table("model.json", &body)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join("model.json");
        let text = std::fs::read_to_string(&path).map_err(|e| {
            CliError::input(format!("cannot read model from {}: {e}", path.display()))
        })?;
        serde_json::from_str(&text)
            .map_err(|e| CliError::input(format!("model parse error: {e}")))
    }

    /// Rebuilds a FitResult by re-running the E-step on the given data.
    pub fn to_fit(&self, data: &hsvar_core::Dataset) -> Result<FitResult> {
        let posteriors = hsvar_core::em::e_step(data, &self.params)?;
        Ok(FitResult {
            params: self.params.clone(),
            posteriors,
            loglik_trace: Vec::new(),
            icl: self.icl,
            iterations: self.iterations,
            converged: self.converged,
            lambda0: self.lambda0,
            seed: self.seed,
        })
    }
}

/// Long-format parameter table shared by fit outputs and simulation truths.
pub fn params_table(params: &ModelParams, delimiter: char) -> String {
    let mut out = String::new();
    let d = delimiter;
    out.push_str(&format!("block{d}state{d}row{d}col{d}value\n"));
    let mut push = |block: &str, state: usize, row: usize, col: usize, v: f64| {
        out.push_str(&format!("{block}{d}{state}{d}{row}{d}{col}{d}{}\n", fmt_f64(v)));
    };
    let dims = params.dims;
    for k in 0..dims.k {
        let var = &params.var[k];
        for r in 0..dims.p {
            push("intercept", k, r, 0, var.intercept[r]);
        }
        for r in 0..dims.p {
            for c in 0..dims.j {
                push("exog", k, r, c, var.exog[[r, c]]);
            }
        }
        for (lag, a) in var.lags.iter().enumerate() {
            let name = format!("lag{}", lag + 1);
            for r in 0..dims.p {
                for c in 0..dims.p {
                    push(&name, k, r, c, a[[r, c]]);
                }
            }
        }
        for r in 0..dims.p {
            for c in 0..dims.p {
                push("sigma", k, r, c, var.sigma[[r, c]]);
            }
        }
        push("hazard_beta0", k, 0, 0, params.hazard.beta0[k]);
        push("hazard_beta1", k, 0, 0, params.hazard.beta1[k]);
        for c in 0..dims.l {
            push("hazard_beta2", k, 0, c, params.hazard.beta2[[k, c]]);
        }
        push("pi", k, 0, 0, params.pi.pi[k]);
        for j in 0..dims.k {
            push("omega", k, 0, j, params.omega.omega[[k, j]]);
        }
    }
    out
}
