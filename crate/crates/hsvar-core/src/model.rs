//! Shared model-level types: problem dimensions, the observed dataset and
//! the full parameter bundle of the hidden semi-Markov VAR.

use crate::emission::VarParams;
use crate::error::{HsvarError, Result};
use crate::hidden::{HazardParams, InitialDistribution, SwitchMatrix};
use chrono::NaiveDate;
use ndarray::Array2;
use serde::{Deserialize, Serialize};

/// Problem dimensions: `k` hidden states, `p` outcomes, VAR order `h`,
/// `j` emission covariates, `l` hazard covariates, dwell truncation `m`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    pub k: usize,
    pub p: usize,
    pub h: usize,
    pub j: usize,
    pub l: usize,
    pub m: usize,
}

impl Dims {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 || self.p == 0 || self.m == 0 {
            return Err(HsvarError::input(format!(
                "dims must have k >= 1, p >= 1, m >= 1 (got k={}, p={}, m={})",
                self.k, self.p, self.m
            )));
        }
        Ok(())
    }

    /// Number of VAR predictors per outcome row: covariates plus lagged outcomes.
    pub fn n_predictors(&self) -> usize {
        self.j + self.p * self.h
    }
}

/// Time axis of a dataset: a gap-free integer index or consecutive calendar days.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum TimeIndex {
    Integers(Vec<i64>),
    Dates(Vec<NaiveDate>),
}

impl TimeIndex {
    pub fn len(&self) -> usize {
        match self {
            TimeIndex::Integers(v) => v.len(),
            TimeIndex::Dates(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Simple 0..T index.
    pub fn range(t: usize) -> Self {
        TimeIndex::Integers((0..t as i64).collect())
    }

    /// Label for row `t`, as written to output tables.
    pub fn label(&self, t: usize) -> String {
        match self {
            TimeIndex::Integers(v) => v[t].to_string(),
            TimeIndex::Dates(v) => v[t].format("%Y-%m-%d").to_string(),
        }
    }

    /// Checks the index is strictly increasing with unit steps and returns
    /// the first offending position otherwise.
    pub fn validate_contiguous(&self) -> Result<()> {
        match self {
            TimeIndex::Integers(v) => {
                for w in 1..v.len() {
                    if v[w] != v[w - 1] + 1 {
                        return Err(HsvarError::input(format!(
                            "time index gap between rows {} and {}: {} -> {}",
                            w - 1,
                            w,
                            v[w - 1],
                            v[w]
                        )));
                    }
                }
                Ok(())
            }
            TimeIndex::Dates(v) => {
                for w in 1..v.len() {
                    let expect = v[w - 1].succ_opt();
                    if expect != Some(v[w]) {
                        return Err(HsvarError::input(format!(
                            "time index gap between rows {} and {}: {} -> {}",
                            w - 1,
                            w,
                            v[w - 1],
                            v[w]
                        )));
                    }
                }
                Ok(())
            }
        }
    }
}

/// Observed data: `T x p` outcomes, `T x j` emission covariates and
/// `T x l` hazard covariates on a common gap-free time index.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Dataset {
    pub y: Array2<f64>,
    /// Emission covariates entering the conditional mean (may have 0 columns).
    pub x: Array2<f64>,
    /// Hazard covariates entering the dwell regressions (may have 0 columns).
    pub z: Array2<f64>,
    pub time: TimeIndex,
}

impl Dataset {
    pub fn new(y: Array2<f64>, x: Array2<f64>, z: Array2<f64>, time: TimeIndex) -> Result<Self> {
        let t = y.nrows();
        if x.nrows() != t || z.nrows() != t || time.len() != t {
            return Err(HsvarError::input(format!(
                "row count mismatch: y has {}, x has {}, z has {}, time has {}",
                t,
                x.nrows(),
                z.nrows(),
                time.len()
            )));
        }
        for (name, arr) in [("y", &y), ("x", &x), ("z", &z)] {
            if let Some(((r, c), v)) = arr.indexed_iter().find(|(_, v)| !v.is_finite()) {
                return Err(HsvarError::input(format!(
                    "non-finite value {v} in {name} at row {r}, column {c}"
                )));
            }
        }
        Ok(Dataset { y, x, z, time })
    }

    /// Convenience constructor with a plain 0..T time index.
    pub fn from_arrays(y: Array2<f64>, x: Array2<f64>, z: Array2<f64>) -> Result<Self> {
        let t = y.nrows();
        Dataset::new(y, x, z, TimeIndex::range(t))
    }

    pub fn n_rows(&self) -> usize {
        self.y.nrows()
    }

    pub fn n_outcomes(&self) -> usize {
        self.y.ncols()
    }

    pub fn n_emission_covariates(&self) -> usize {
        self.x.ncols()
    }

    pub fn n_hazard_covariates(&self) -> usize {
        self.z.ncols()
    }
}

/// Every estimable quantity of the model: per-state VAR blocks, hazard
/// regressions, conditional switching matrix and initial distribution.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelParams {
    pub dims: Dims,
    pub hazard: HazardParams,
    pub omega: SwitchMatrix,
    pub pi: InitialDistribution,
    /// One VAR parameter block per state.
    pub var: Vec<VarParams>,
}

impl ModelParams {
    pub fn validate(&self) -> Result<()> {
        let d = &self.dims;
        d.validate()?;
        self.hazard.validate(d.k, d.l)?;
        self.omega.validate(d.k)?;
        self.pi.validate(d.k)?;
        if self.var.len() != d.k {
            return Err(HsvarError::input(format!(
                "expected {} VAR blocks, got {}",
                d.k,
                self.var.len()
            )));
        }
        for (k, v) in self.var.iter().enumerate() {
            v.validate(d.p, d.j, d.h)
                .map_err(|e| HsvarError::input(format!("VAR block of state {k}: {e}")))?;
        }
        Ok(())
    }
}
