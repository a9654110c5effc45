use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::load::LoadReport;
use crate::rdd::{DesignKind, Method, RddEstimate};
use crate::sim::McSummary;

/// Machine-readable output of the `estimate` command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateReport {
    pub outcome: String,
    pub running: String,
    pub cutoff: f64,
    pub load: LoadReport,
    pub estimate: RddEstimate,
}

pub fn estimate_json(report: &EstimateReport) -> String {
    let mut s = serde_json::to_string_pretty(report).expect("report serializes");
    s.push('\n');
    s
}

fn selected_names(e: &RddEstimate) -> String {
    if e.selected.is_empty() {
        "none".to_string()
    } else {
        e.selected.iter().map(|c| c.name.as_str()).collect::<Vec<_>>().join(", ")
    }
}

fn method_label(m: Method) -> &'static str {
    match m {
        Method::Standard => "standard",
        Method::CovariateAdjusted => "covariate-adjusted",
        Method::CovariateSelection => "covariate selection",
    }
}

fn design_label(d: DesignKind) -> &'static str {
    match d {
        DesignKind::Sharp => "Sharp",
        DesignKind::Fuzzy => "Fuzzy",
        DesignKind::Kink => "Kink",
    }
}

/// One labelled row per reported quantity.
pub fn estimate_text(report: &EstimateReport) -> String {
    let e = &report.estimate;
    let level = format!("{}%", (e.level * 100.0 * 1e6).round() / 1e6);
    let rows: Vec<(String, String)> = vec![
        ("Estimate".into(), format!("{:.6}", e.tau_hat)),
        ("Bias-corrected estimate".into(), format!("{:.6}", e.tau_bc)),
        (format!("Robust {level} CI"), format!("[{:.6}, {:.6}]", e.ci.lower, e.ci.upper)),
        ("Robust p-value".into(), format!("{:.6}", e.p_value)),
        ("Robust std. error".into(), format!("{:.6}", e.se_robust)),
        ("Bandwidth h".into(), format!("{:.6}", e.bandwidths.h)),
        ("Bandwidth b".into(), format!("{:.6}", e.bandwidths.b)),
        ("Effective n (left)".into(), e.n_minus.to_string()),
        ("Effective n (right)".into(), e.n_plus.to_string()),
        ("Observations".into(), format!("{} ({} dropped)", e.n, report.load.rows_dropped)),
    ];
    let width = rows.iter().map(|(k, _)| k.len()).max().unwrap_or(0);
    let mut out = format!(
        "{} RD estimate of {} at {} = {} ({})\n",
        design_label(e.design_kind),
        report.outcome,
        report.running,
        report.cutoff,
        method_label(e.method_used)
    );
    for (k, v) in rows {
        let _ = writeln!(out, "  {k:<width$}  {v}");
    }
    let _ = writeln!(out, "Selected covariates: {}", selected_names(e));
    out
}

const ESTIMATE_COLUMNS: [&str; 14] = [
    "tau_hat", "tau_bc", "ci_lower", "ci_upper", "p_value", "se_robust", "level", "h", "b", "n", "n_minus", "n_plus",
    "method_used", "selected",
];

/// Header and one row; floats use the shortest exact representation.
pub fn estimate_csv(report: &EstimateReport) -> String {
    let e = &report.estimate;
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(ESTIMATE_COLUMNS).expect("in-memory write");
    let names: Vec<&str> = e.selected.iter().map(|c| c.name.as_str()).collect();
    w.write_record([
        e.tau_hat.to_string(),
        e.tau_bc.to_string(),
        e.ci.lower.to_string(),
        e.ci.upper.to_string(),
        e.p_value.to_string(),
        e.se_robust.to_string(),
        e.level.to_string(),
        e.bandwidths.h.to_string(),
        e.bandwidths.b.to_string(),
        e.n.to_string(),
        e.n_minus.to_string(),
        e.n_plus.to_string(),
        serde_json::to_value(e.method_used).expect("enum serializes").as_str().unwrap_or_default().to_string(),
        names.join(";"),
    ])
    .expect("in-memory write");
    String::from_utf8(w.into_inner().expect("flush")).expect("utf-8")
}

pub fn simulate_json(summaries: &[McSummary]) -> String {
    let mut s = serde_json::to_string_pretty(summaries).expect("summary serializes");
    s.push('\n');
    s
}

/// The CSV tables re-aligned into padded columns.
pub fn simulate_text(csv_tables: &str) -> String {
    let rows: Vec<Vec<&str>> = csv_tables.lines().map(|l| l.split(',').collect()).collect();
    let ncol = rows.first().map_or(0, Vec::len);
    let widths: Vec<usize> = (0..ncol)
        .map(|c| rows.iter().map(|r| r.get(c).map_or(0, |v| v.len())).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for r in &rows {
        let cells: Vec<String> = r
            .iter()
            .enumerate()
            .map(|(c, v)| if c < 2 || c == 4 { format!("{v:<w$}", w = widths[c]) } else { format!("{v:>w$}", w = widths[c]) })
            .collect();
        let _ = writeln!(out, "{}", cells.join("  ").trim_end());
    }
    out
}
