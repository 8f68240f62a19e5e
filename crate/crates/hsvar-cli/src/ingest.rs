//! Dataset ingestion: delimiter-separated text with a header row, a
//! gap-free time column, outcome columns and covariate columns by role.

use crate::config::DataConfig;
use crate::error::{CliError, Result};
use chrono::{Datelike, NaiveDate, Weekday};
use hsvar_core::{Dataset, TimeIndex};
use ndarray::Array2;
use std::path::Path;

/// Ingested data plus the column names used in emitted tables.
#[derive(Debug, Clone)]
pub struct Ingested {
    pub dataset: Dataset,
    pub outcome_names: Vec<String>,
    pub emission_covariate_names: Vec<String>,
    pub hazard_covariate_names: Vec<String>,
    pub time_name: String,
}

pub fn ingest(path: &Path, config: &DataConfig) -> Result<Ingested> {
    let delimiter = config.delimiter.as_bytes()[0];
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(delimiter)
        .has_headers(true)
        .flexible(false)
        .from_path(path)
        .map_err(|e| CliError::input(format!("cannot open {}: {e}", path.display())))?;

    let headers: Vec<String> = reader
        .headers()
        .map_err(|e| CliError::input(format!("header parse error: {e}")))?
        .iter()
        .map(str::to_string)
        .collect();

    let column_index = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| CliError::input(format!("column '{name}' not found in header")))
    };

    let time_idx = column_index(&config.time_column)?;
    let outcome_idx: Vec<usize> = config
        .outcome_columns
        .iter()
        .map(|c| column_index(c))
        .collect::<Result<_>>()?;
    let emission_idx: Vec<usize> = config
        .emission_covariate_columns
        .iter()
        .map(|c| column_index(c))
        .collect::<Result<_>>()?;
    let hazard_idx: Vec<usize> = config
        .hazard_covariate_columns
        .iter()
        .map(|c| column_index(c))
        .collect::<Result<_>>()?;

    let mut time_raw: Vec<String> = Vec::new();
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (row_no, record) in reader.records().enumerate() {
        let record =
            record.map_err(|e| CliError::input(format!("row {}: {e}", row_no + 2)))?;
        let mut numeric = Vec::with_capacity(headers.len());
        for (col, field) in record.iter().enumerate() {
            if col == time_idx {
                numeric.push(f64::NAN); // parsed separately
                continue;
            }
            let needed = outcome_idx.contains(&col)
                || emission_idx.contains(&col)
                || hazard_idx.contains(&col);
            if !needed {
                numeric.push(f64::NAN);
                continue;
            }
            let trimmed = field.trim();
            if trimmed.is_empty() {
                return Err(CliError::input(format!(
                    "missing value at row {}, column '{}'",
                    row_no + 2,
                    headers[col]
                )));
            }
            let value: f64 = trimmed.parse().map_err(|_| {
                CliError::input(format!(
                    "non-numeric value '{}' at row {}, column '{}'",
                    trimmed,
                    row_no + 2,
                    headers[col]
                ))
            })?;
            if !value.is_finite() {
                return Err(CliError::input(format!(
                    "non-finite value at row {}, column '{}'",
                    row_no + 2,
                    headers[col]
                )));
            }
            numeric.push(value);
        }
        time_raw.push(record[time_idx].trim().to_string());
        rows.push(numeric);
    }
    let t_len = rows.len();
    if t_len == 0 {
        return Err(CliError::input("data file has no rows"));
    }

    // Time column: all integers or all ISO dates.
    let time = parse_time(&time_raw)?;
    time.validate_contiguous().map_err(CliError::from)?;

    let p = outcome_idx.len();
    let mut y = Array2::zeros((t_len, p));
    for t in 0..t_len {
        for (jj, &col) in outcome_idx.iter().enumerate() {
            let mut v = rows[t][col];
            if config.log_transform_outcomes {
                if v <= 0.0 {
                    return Err(CliError::input(format!(
                        "cannot log-transform non-positive value {v} at row {}, column '{}'",
                        t + 2,
                        headers[col]
                    )));
                }
                v = v.ln();
            }
            y[[t, jj]] = v;
        }
    }

    let mut emission_names: Vec<String> = config.emission_covariate_columns.clone();
    let weekend = if config.weekend_covariate {
        let TimeIndex::Dates(dates) = &time else {
            return Err(CliError::input(
                "weekend_covariate requires a date-typed time column",
            ));
        };
        emission_names.push("weekend".to_string());
        Some(
            dates
                .iter()
                .map(|d| {
                    matches!(d.weekday(), Weekday::Sat | Weekday::Sun) as u8 as f64
                })
                .collect::<Vec<f64>>(),
        )
    } else {
        None
    };

    let j = emission_idx.len() + weekend.is_some() as usize;
    let mut x = Array2::zeros((t_len, j));
    for t in 0..t_len {
        for (jj, &col) in emission_idx.iter().enumerate() {
            x[[t, jj]] = rows[t][col];
        }
        if let Some(w) = &weekend {
            x[[t, j - 1]] = w[t];
        }
    }

    let l = hazard_idx.len();
    let mut z = Array2::zeros((t_len, l));
    for t in 0..t_len {
        for (jj, &col) in hazard_idx.iter().enumerate() {
            z[[t, jj]] = rows[t][col];
        }
    }

    let dataset = Dataset::new(y, x, z, time).map_err(CliError::from)?;
    Ok(Ingested {
        dataset,
        outcome_names: config.outcome_columns.clone(),
        emission_covariate_names: emission_names,
        hazard_covariate_names: config.hazard_covariate_columns.clone(),
        time_name: config.time_column.clone(),
    })
}

fn parse_time(raw: &[String]) -> Result<TimeIndex> {
    if raw.iter().all(|s| s.parse::<i64>().is_ok()) {
        return Ok(TimeIndex::Integers(
            raw.iter().map(|s| s.parse().unwrap()).collect(),
        ));
    }
    let dates: Result<Vec<NaiveDate>> = raw
        .iter()
        .enumerate()
        .map(|(row, s)| {
            NaiveDate::parse_from_str(s, "%Y-%m-%d").map_err(|_| {
                CliError::input(format!(
                    "time value '{s}' at row {} is neither an integer nor an ISO date",
                    row + 2
                ))
            })
        })
        .collect();
    Ok(TimeIndex::Dates(dates?))
}
