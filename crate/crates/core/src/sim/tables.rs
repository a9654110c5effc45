use std::fs::File;
use std::io::{self, Write};
use std::path::Path;

use thiserror::Error;

use super::monte_carlo::McSummary;

#[derive(Debug, Error)]
pub enum TableError {
    #[error("no summaries to tabulate")]
    Empty,
    #[error("failed to write table: {0}")]
    Io(#[from] io::Error),
}

pub const COLUMNS: [&str; 16] = [
    "dgp",
    "p",
    "n",
    "reps",
    "method",
    "bias",
    "rmse",
    "cp",
    "cp_se",
    "length",
    "h_mean",
    "h_sd",
    "selected_mean",
    "selected_min",
    "selected_max",
    "failures",
];

fn fixed3(v: f64) -> String {
    if v.is_finite() {
        // Avoid printing "-0.000".
        let s = format!("{v:.3}");
        if s == "-0.000" {
            "0.000".into()
        } else {
            s
        }
    } else {
        "NaN".into()
    }
}

/// Writes one CSV row per (design, p, method).
pub fn emit_tables<W: Write>(summaries: &[McSummary], mut out: W) -> Result<(), TableError> {
    if summaries.is_empty() {
        return Err(TableError::Empty);
    }
    writeln!(out, "{}", COLUMNS.join(","))?;
    for s in summaries {
        for m in &s.methods {
            let row = [
                s.spec.dgp.name().to_string(),
                s.spec.p.to_string(),
                s.spec.n.to_string(),
                s.reps.to_string(),
                m.name.clone(),
                fixed3(m.bias),
                fixed3(m.rmse),
                fixed3(m.coverage),
                fixed3(m.coverage_se),
                fixed3(m.mean_length),
                fixed3(m.h_mean),
                fixed3(m.h_sd),
                fixed3(m.selected_mean),
                m.selected_min.to_string(),
                m.selected_max.to_string(),
                m.failures.to_string(),
            ];
            writeln!(out, "{}", row.join(","))?;
        }
    }
    out.flush()?;
    Ok(())
}

pub fn write_tables(summaries: &[McSummary], path: impl AsRef<Path>) -> Result<(), TableError> {
    if summaries.is_empty() {
        return Err(TableError::Empty);
    }
    let f = io::BufWriter::new(File::create(path)?);
    emit_tables(summaries, f)
}
