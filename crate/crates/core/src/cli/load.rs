use std::fs::File;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::error::RdError;
use crate::kernelfit::Sample;

/// Which CSV columns feed the sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnMapping {
    pub outcome: String,
    pub running: String,
    pub takeup: Option<String>,
    pub covariates: CovariateColumns,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CovariateColumns {
    None,
    List(Vec<String>),
    /// Every column not mapped to the outcome, running variable or take-up.
    AllOthers,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LoadReport {
    pub rows_read: usize,
    pub rows_dropped: usize,
    /// 1-based file lines (the header is line 1) of the dropped rows.
    pub dropped_lines: Vec<u64>,
}

#[derive(Debug, Error)]
pub enum LoadError {
    #[error("file not found: {}", .0.display())]
    FileNotFound(PathBuf),
    #[error("line {line}, column '{column}': cannot parse '{value}' as a finite number")]
    ParseError { line: u64, column: String, value: String },
    #[error("column '{0}' not found in the header")]
    MissingColumn(String),
    #[error("malformed CSV: {0}")]
    Csv(#[from] csv::Error),
    #[error("cannot build sample: {0}")]
    Sample(#[from] RdError),
}

const MISSING: [&str; 7] = ["", "NA", "na", "N/A", "NaN", "nan", "."];

fn is_missing(cell: &str) -> bool {
    MISSING.contains(&cell)
}

/// Reads a CSV with a header row. Rows with a missing value in any mapped
/// column are dropped and counted; any other non-numeric mapped cell is an error.
pub fn load_csv(path: &Path, mapping: &ColumnMapping, cutoff: f64) -> Result<(Sample, LoadReport), LoadError> {
    let file = File::open(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => LoadError::FileNotFound(path.to_path_buf()),
        _ => LoadError::Csv(csv::Error::from(e)),
    })?;
    let mut reader = csv::ReaderBuilder::new()
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(file);
    let header: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    let find = |name: &str| {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| LoadError::MissingColumn(name.to_string()))
    };

    let y_col = find(&mapping.outcome)?;
    let x_col = find(&mapping.running)?;
    let w_col = mapping.takeup.as_deref().map(find).transpose()?;
    let cov_names: Vec<String> = match &mapping.covariates {
        CovariateColumns::None => Vec::new(),
        CovariateColumns::List(names) => names.clone(),
        CovariateColumns::AllOthers => header
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != y_col && *i != x_col && Some(*i) != w_col)
            .map(|(_, h)| h.clone())
            .collect(),
    };
    let cov_cols = cov_names.iter().map(|c| find(c)).collect::<Result<Vec<_>, _>>()?;

    let mut mapped = vec![y_col, x_col];
    mapped.extend(w_col);
    mapped.extend(&cov_cols);

    let mut report = LoadReport::default();
    let (mut x, mut y, mut w) = (Vec::new(), Vec::new(), Vec::new());
    let mut z: Vec<f64> = Vec::new();
    for (k, record) in reader.records().enumerate() {
        let record = record?;
        let line = record.position().map_or(k as u64 + 2, |p| p.line());
        report.rows_read += 1;
        let cells: Vec<Option<&str>> = mapped.iter().map(|&c| record.get(c)).collect();
        if cells.iter().any(|c| c.is_none_or(is_missing)) {
            report.rows_dropped += 1;
            report.dropped_lines.push(line);
            continue;
        }
        let mut values = Vec::with_capacity(mapped.len());
        for (&c, cell) in mapped.iter().zip(&cells) {
            let cell = cell.expect("checked above");
            match cell.parse::<f64>() {
                Ok(v) if v.is_finite() => values.push(v),
                _ => {
                    return Err(LoadError::ParseError {
                        line,
                        column: header[c].clone(),
                        value: cell.to_string(),
                    })
                }
            }
        }
        y.push(values[0]);
        x.push(values[1]);
        let rest = if w_col.is_some() {
            w.push(values[2]);
            &values[3..]
        } else {
            &values[2..]
        };
        z.extend_from_slice(rest);
    }

    let n = x.len();
    let zm = DMatrix::from_row_slice(n, cov_cols.len(), &z);
    let mut sample = Sample::new(x, y, zm, cutoff)?.with_covariate_names(cov_names)?;
    if w_col.is_some() {
        sample = sample.with_takeup(w)?;
    }
    Ok((sample, report))
}
