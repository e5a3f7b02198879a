//! CSV ingestion and emission. Dialect: comma separators, dot decimals,
//! one header row, UTF-8, LF line endings. Parse failures name the file
//! line and column so malformed inputs are easy to locate.

use anyhow::{bail, Context};
use ndarray::{Array1, Array2};
use spqrx::regression::Dataset;
use std::path::Path;

use crate::config::Preprocessing;

/// A parsed numeric table.
pub struct Table {
    pub headers: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

pub fn read_table(path: &Path) -> anyhow::Result<Table> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .with_context(|| format!("cannot open {}", path.display()))?;
    let headers: Vec<String> = reader
        .headers()
        .context("missing header row")?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    if headers.is_empty() {
        bail!("{}: empty header row", path.display());
    }
    let mut rows = Vec::new();
    for (idx, record) in reader.records().enumerate() {
        let line = idx + 2; // header occupies line 1
        let record = record.with_context(|| format!("{}: malformed row at line {line}", path.display()))?;
        if record.len() != headers.len() {
            bail!(
                "{}: line {line} has {} fields, header has {}",
                path.display(),
                record.len(),
                headers.len()
            );
        }
        let mut row = Vec::with_capacity(headers.len());
        for (col, field) in record.iter().enumerate() {
            let v: f64 = field.trim().parse().map_err(|_| {
                anyhow::anyhow!(
                    "{}: non-numeric value '{}' at line {line}, column {} ({})",
                    path.display(),
                    field,
                    col + 1,
                    headers[col]
                )
            })?;
            row.push(v);
        }
        rows.push(row);
    }
    if rows.is_empty() {
        bail!("{}: no data rows", path.display());
    }
    Ok(Table { headers, rows })
}

/// Resolve the response column index per preprocessing settings:
/// explicit name, else a column named `y`, else the last column.
pub fn response_index(table: &Table, pre: &Preprocessing) -> anyhow::Result<usize> {
    if let Some(name) = &pre.response_column {
        return table
            .headers
            .iter()
            .position(|h| h == name)
            .with_context(|| format!("response column '{name}' not found"));
    }
    Ok(table
        .headers
        .iter()
        .position(|h| h == "y")
        .unwrap_or(table.headers.len() - 1))
}

/// Covariate column indices: the configured subset, else every column
/// other than the response.
pub fn covariate_indices(
    table: &Table,
    pre: &Preprocessing,
    response: usize,
) -> anyhow::Result<Vec<usize>> {
    if pre.covariate_columns.is_empty() {
        return Ok((0..table.headers.len()).filter(|&c| c != response).collect());
    }
    pre.covariate_columns
        .iter()
        .map(|name| {
            table
                .headers
                .iter()
                .position(|h| h == name)
                .with_context(|| format!("covariate column '{name}' not found"))
        })
        .collect()
}

/// Build a training dataset, applying the recorded preprocessing.
pub fn dataset_from_table(table: &Table, pre: &Preprocessing) -> anyhow::Result<Dataset> {
    let response = response_index(table, pre)?;
    let covariates = covariate_indices(table, pre, response)?;
    let n = table.rows.len();
    let mut x = Array2::zeros((n, covariates.len()));
    let mut y = Array1::zeros(n);
    for (i, row) in table.rows.iter().enumerate() {
        for (j, &c) in covariates.iter().enumerate() {
            x[(i, j)] = row[c];
        }
        let mut v = row[response];
        if v <= 0.0 {
            bail!(
                "non-positive response {v} at data row {} (line {}); responses must be positive{}",
                i + 1,
                i + 2,
                if pre.sqrt_transform {
                    ""
                } else {
                    " (a square-root transform cannot fix this either)"
                }
            );
        }
        if pre.sqrt_transform {
            v = v.sqrt();
        }
        y[i] = v;
    }
    Ok(Dataset::new(x, y)?)
}

/// Extract only covariate rows (for prediction inputs): uses the model's
/// covariate count; accepts tables that also carry a `y` column.
pub fn covariate_rows(table: &Table, expected: usize) -> anyhow::Result<Vec<Vec<f64>>> {
    let mut drop: Option<usize> = None;
    if table.headers.len() == expected + 1 {
        drop = table.headers.iter().position(|h| h == "y");
        if drop.is_none() {
            drop = Some(table.headers.len() - 1);
        }
    } else if table.headers.len() != expected {
        bail!(
            "model expects {expected} covariates, file has {} columns",
            table.headers.len()
        );
    }
    Ok(table
        .rows
        .iter()
        .map(|row| {
            row.iter()
                .enumerate()
                .filter(|(c, _)| Some(*c) != drop)
                .map(|(_, v)| *v)
                .collect()
        })
        .collect())
}

/// Write a CSV with the crate's dialect.
pub fn write_csv(path: &Path, headers: &[&str], rows: &[Vec<f64>]) -> anyhow::Result<()> {
    let mut w = csv::Writer::from_path(path)
        .with_context(|| format!("cannot create {}", path.display()))?;
    w.write_record(headers)?;
    for row in rows {
        w.write_record(row.iter().map(|v| format_float(*v)))?;
    }
    w.flush()?;
    Ok(())
}

/// Shortest representation that parses back to the same f64.
pub fn format_float(v: f64) -> String {
    format!("{v}")
}
