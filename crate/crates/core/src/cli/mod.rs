//! Command-line front end: `rdlasso estimate` on a CSV file and
//! `rdlasso simulate` for the Monte Carlo tables.

mod load;
mod report;

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use load::{load_csv, ColumnMapping, CovariateColumns, LoadError, LoadReport};
pub use report::{estimate_csv, estimate_json, estimate_text, simulate_json, simulate_text, EstimateReport};

use crate::error::RdError;
use crate::kernelfit::KernelFamily;
use crate::lasso::ThresholdRule;
use crate::localpoly::BandwidthSelector;
use crate::rdd::{estimate, BandwidthMode, DesignKind, LambdaChoice, Method, RddRequest};
use crate::sim::{emit_tables, run_monte_carlo, table_methods, Dgp, DgpSpec, McConfig, MethodSpec, TableError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Command {
    Estimate,
    Simulate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputFormat {
    Json,
    Csv,
    #[default]
    Text,
}

impl FromStr for OutputFormat {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "json" => Ok(OutputFormat::Json),
            "csv" => Ok(OutputFormat::Csv),
            "text" | "txt" => Ok(OutputFormat::Text),
            other => Err(format!("unknown format '{other}' (json, csv or text)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Threads {
    #[default]
    Auto,
    Fixed(usize),
}

impl FromStr for Threads {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        if s.eq_ignore_ascii_case("auto") {
            return Ok(Threads::Auto);
        }
        match s.parse::<usize>() {
            Ok(0) | Err(_) => Err(format!("threads must be 'auto' or a positive integer, got '{s}'")),
            Ok(n) => Ok(Threads::Fixed(n)),
        }
    }
}

pub fn parse_selection(s: &str) -> Result<ThresholdRule, String> {
    match s.to_ascii_lowercase().replace('-', "_").as_str() {
        "support" => Ok(ThresholdRule::Support),
        "threshold" | "scaled_threshold" => Ok(ThresholdRule::ScaledThreshold),
        other => Err(format!("unknown selection rule '{other}' (support or threshold)")),
    }
}

pub fn parse_selector(s: &str) -> Result<BandwidthSelector, String> {
    match s.to_ascii_lowercase().replace('_', "-").as_str() {
        "three-step" => Ok(BandwidthSelector::ThreeStep),
        "two-step" => Ok(BandwidthSelector::TwoStep),
        other => Err(format!("unknown bandwidth selector '{other}' (three-step or two-step)")),
    }
}

fn parse_covariates(s: &str) -> Result<CovariateColumns, String> {
    let t = s.trim();
    if t.eq_ignore_ascii_case("all-others") {
        return Ok(CovariateColumns::AllOthers);
    }
    if t.is_empty() || t.eq_ignore_ascii_case("none") {
        return Ok(CovariateColumns::None);
    }
    let names: Vec<String> = t.split(',').map(|c| c.trim().to_string()).collect();
    if names.iter().any(String::is_empty) {
        return Err(format!("empty name in covariate list '{s}'"));
    }
    Ok(CovariateColumns::List(names))
}

#[derive(Debug, Parser)]
#[command(name = "rdlasso", version, about = "Regression discontinuity estimation with Lasso covariate selection")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Commands,
}

#[derive(Debug, Subcommand)]
pub enum Commands {
    /// Estimate a treatment effect from a CSV file.
    Estimate(EstimateArgs),
    /// Run the Monte Carlo designs and write summary tables.
    Simulate(SimulateArgs),
}

/// Options shared by both commands.
#[derive(Debug, Clone, Args)]
pub struct TuningArgs {
    #[arg(long, default_value = "triangular")]
    pub kernel: KernelFamily,
    #[arg(long, default_value_t = 0.95)]
    pub level: f64,
    /// Use b = h for the bias correction.
    #[arg(long)]
    pub hb_restricted: bool,
    /// plugin, cv or a fixed nonnegative value.
    #[arg(long, default_value = "plugin")]
    pub lambda: LambdaChoice,
    /// support or threshold.
    #[arg(long, default_value = "support", value_parser = parse_selection)]
    pub selection: ThresholdRule,
    /// three-step or two-step.
    #[arg(long, default_value = "three-step", value_parser = parse_selector)]
    pub selector: BandwidthSelector,
    /// Scale of the bias-estimate variance added to the bandwidth denominator.
    #[arg(long, default_value_t = 1.0)]
    pub regularization: f64,
    /// json, csv or text.
    #[arg(long, default_value = "text")]
    pub format: OutputFormat,
    /// Write to a file instead of standard output.
    #[arg(long, short)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct EstimateArgs {
    /// Input CSV with a header row.
    #[arg(long, short)]
    pub input: PathBuf,
    #[arg(long, allow_negative_numbers = true)]
    pub cutoff: f64,
    #[arg(long, default_value = "y")]
    pub outcome: String,
    #[arg(long, default_value = "x")]
    pub running: String,
    /// Take-up column (fuzzy designs).
    #[arg(long)]
    pub takeup: Option<String>,
    /// Comma-separated column names, `all-others` or `none`.
    #[arg(long, default_value = "none", value_parser = parse_covariates)]
    pub covariates: CovariateColumns,
    /// standard, adjusted or selection.
    #[arg(long, default_value = "selection")]
    pub method: Method,
    /// sharp, fuzzy or kink.
    #[arg(long, default_value = "sharp")]
    pub design: DesignKind,
    /// Slope change of the policy rule at the cutoff (kink designs).
    #[arg(long, allow_negative_numbers = true)]
    pub kink_slope: Option<f64>,
    /// auto-nocov, auto-cov, adaptive or h=<v>[,b=<v>].
    #[arg(long, default_value = "adaptive")]
    pub bandwidth: BandwidthMode,
    #[command(flatten)]
    pub tuning: TuningArgs,
}

#[derive(Debug, Clone, Args)]
pub struct SimulateArgs {
    /// dgp1, dgp2 or dgp3.
    #[arg(long)]
    pub dgp: Dgp,
    /// Number of covariates; a comma list runs several designs.
    #[arg(long, value_delimiter = ',', required = true)]
    pub p: Vec<usize>,
    #[arg(long, default_value_t = 500)]
    pub n: usize,
    #[arg(long, default_value_t = 1000)]
    pub reps: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Worker threads: `auto` or a positive integer.
    #[arg(long, default_value = "auto")]
    pub threads: Threads,
    /// Table columns to run (standard, adjusted_nocov_bw, adjusted_cov_bw, selection).
    #[arg(long, value_delimiter = ',')]
    pub columns: Option<Vec<String>>,
    #[command(flatten)]
    pub tuning: TuningArgs,
}

/// A validated run of either command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub command: Command,
    pub input: Option<PathBuf>,
    pub cutoff: Option<f64>,
    pub mapping: ColumnMapping,
    pub method: Method,
    pub design_kind: DesignKind,
    pub kink_slope: Option<f64>,
    pub kernel: KernelFamily,
    pub bandwidth_mode: BandwidthMode,
    pub level: f64,
    pub hb_restricted: bool,
    pub lambda: LambdaChoice,
    pub selection: ThresholdRule,
    pub selector: BandwidthSelector,
    pub regularization: f64,
    pub output: Option<PathBuf>,
    pub format: OutputFormat,
    pub seed: u64,
    pub reps: usize,
    pub dgp: Option<Dgp>,
    pub p: Vec<usize>,
    pub n: usize,
    pub columns: Vec<String>,
    pub threads: Threads,
}

impl RunConfig {
    fn with_tuning(command: Command, t: TuningArgs) -> Self {
        Self {
            command,
            input: None,
            cutoff: None,
            mapping: ColumnMapping {
                outcome: "y".into(),
                running: "x".into(),
                takeup: None,
                covariates: CovariateColumns::None,
            },
            method: Method::CovariateSelection,
            design_kind: DesignKind::Sharp,
            kink_slope: None,
            kernel: t.kernel,
            bandwidth_mode: BandwidthMode::Adaptive,
            level: t.level,
            hb_restricted: t.hb_restricted,
            lambda: t.lambda,
            selection: t.selection,
            selector: t.selector,
            regularization: t.regularization,
            output: t.output,
            format: t.format,
            seed: 1,
            reps: 0,
            dgp: None,
            p: Vec::new(),
            n: 0,
            columns: Vec::new(),
            threads: Threads::Auto,
        }
    }

    pub fn from_cli(cli: Cli) -> Result<Self, CliError> {
        let cfg = match cli.command {
            Commands::Estimate(a) => Self {
                input: Some(a.input),
                cutoff: Some(a.cutoff),
                mapping: ColumnMapping {
                    outcome: a.outcome,
                    running: a.running,
                    takeup: a.takeup,
                    covariates: a.covariates,
                },
                method: a.method,
                design_kind: a.design,
                kink_slope: a.kink_slope,
                bandwidth_mode: a.bandwidth,
                ..Self::with_tuning(Command::Estimate, a.tuning)
            },
            Commands::Simulate(a) => Self {
                seed: a.seed,
                reps: a.reps,
                dgp: Some(a.dgp),
                p: a.p,
                n: a.n,
                columns: a
                    .columns
                    .unwrap_or_else(|| table_methods().into_iter().map(|m| m.name).collect()),
                threads: a.threads,
                ..Self::with_tuning(Command::Simulate, a.tuning)
            },
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Config(m));
        if !(self.level > 0.0 && self.level < 1.0) {
            return bad(format!("level must lie in (0, 1), got {}", self.level));
        }
        if !(self.regularization >= 0.0 && self.regularization.is_finite()) {
            return bad("regularization must be a nonnegative number".into());
        }
        match self.command {
            Command::Estimate => {
                if self.input.is_none() {
                    return bad("estimate requires an input file".into());
                }
                match self.cutoff {
                    Some(c) if c.is_finite() => {}
                    _ => return bad("estimate requires a finite cutoff".into()),
                }
                if self.design_kind == DesignKind::Fuzzy && self.mapping.takeup.is_none() {
                    return bad("a fuzzy design needs --takeup".into());
                }
                if self.design_kind == DesignKind::Kink && !self.kink_slope.is_some_and(|b| b != 0.0 && b.is_finite()) {
                    return bad("a kink design needs a nonzero --kink-slope".into());
                }
                if let BandwidthMode::Fixed { h, b } = self.bandwidth_mode {
                    if !(h > 0.0 && h.is_finite() && b.is_none_or(|b| b > 0.0 && b.is_finite())) {
                        return bad("fixed bandwidths must be positive".into());
                    }
                }
            }
            Command::Simulate => {
                let Some(dgp) = self.dgp else {
                    return bad("simulate requires --dgp".into());
                };
                if self.p.is_empty() {
                    return bad("simulate requires --p".into());
                }
                if self.reps == 0 {
                    return bad("simulate requires reps >= 1".into());
                }
                for &p in &self.p {
                    DgpSpec::new(dgp, self.n, p, self.seed).map_err(|e| CliError::Config(e.to_string()))?;
                }
                if self.columns.is_empty() {
                    return bad("no table columns selected".into());
                }
                let known: Vec<String> = table_methods().into_iter().map(|m| m.name).collect();
                if let Some(c) = self.columns.iter().find(|c| !known.contains(c)) {
                    return bad(format!("unknown table column '{c}' (expected one of {})", known.join(", ")));
                }
            }
        }
        Ok(())
    }

    fn mc_config(&self) -> McConfig {
        McConfig {
            level: self.level,
            kernel: self.kernel,
            lambda: self.lambda,
            selection: self.selection,
            hb_restricted: self.hb_restricted,
            selector: self.selector,
            regularization: self.regularization,
            threads: match self.threads {
                Threads::Auto => None,
                Threads::Fixed(n) => Some(n),
            },
            ..McConfig::default()
        }
    }
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(#[from] LoadError),
    #[error("estimation error: {0}")]
    Estimation(#[from] RdError),
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::Estimation(_) => 4,
            CliError::Io(_) => 5,
        }
    }
}

impl From<TableError> for CliError {
    fn from(e: TableError) -> Self {
        match e {
            TableError::Io(io) => CliError::Io(io),
            other => CliError::Config(other.to_string()),
        }
    }
}

/// Produces the command's output document.
pub fn render(config: &RunConfig) -> Result<String, CliError> {
    config.validate()?;
    match config.command {
        Command::Estimate => render_estimate(config),
        Command::Simulate => render_simulate(config),
    }
}

fn render_estimate(config: &RunConfig) -> Result<String, CliError> {
    let input = config.input.as_ref().expect("validated");
    let cutoff = config.cutoff.expect("validated");
    let (sample, load) = load_csv(input, &config.mapping, cutoff)?;
    let mut req = RddRequest::new(&sample)
        .method(config.method)
        .design(config.design_kind)
        .kernel(config.kernel)
        .bandwidth(config.bandwidth_mode)
        .level(config.level)
        .hb_restricted(config.hb_restricted)
        .lambda(config.lambda)
        .selection(config.selection)
        .selector(config.selector)
        .regularization(config.regularization);
    if let Some(b) = config.kink_slope {
        req = req.kink_denominator(b);
    }
    let report = EstimateReport {
        outcome: config.mapping.outcome.clone(),
        running: config.mapping.running.clone(),
        cutoff,
        load,
        estimate: estimate(&req)?,
    };
    Ok(match config.format {
        OutputFormat::Json => estimate_json(&report),
        OutputFormat::Csv => estimate_csv(&report),
        OutputFormat::Text => estimate_text(&report),
    })
}

fn render_simulate(config: &RunConfig) -> Result<String, CliError> {
    let dgp = config.dgp.expect("validated");
    let methods: Vec<MethodSpec> = table_methods()
        .into_iter()
        .filter(|m| config.columns.contains(&m.name))
        .collect();
    let cfg = config.mc_config();
    let summaries = config
        .p
        .iter()
        .map(|&p| {
            let spec = DgpSpec::new(dgp, config.n, p, config.seed).map_err(|e| CliError::Config(e.to_string()))?;
            Ok(run_monte_carlo(&spec, config.reps, &methods, &cfg)?)
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    if config.format == OutputFormat::Json {
        return Ok(simulate_json(&summaries));
    }
    let mut buf = Vec::new();
    emit_tables(&summaries, &mut buf)?;
    let tables = String::from_utf8(buf).expect("tables are utf-8");
    Ok(match config.format {
        OutputFormat::Text => simulate_text(&tables),
        _ => tables,
    })
}

/// Renders and writes to the configured output file, or to `stdout`.
pub fn run(config: &RunConfig, stdout: &mut dyn Write) -> Result<(), CliError> {
    let doc = render(config)?;
    match &config.output {
        Some(path) => std::fs::write(path, doc)?,
        None => stdout.write_all(doc.as_bytes())?,
    }
    Ok(())
}

/// Parses `args` (program name first), runs, and returns the exit code.
pub fn main_with_args<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let text = e.render().to_string();
            let _ = if code == 0 { stdout.write_all(text.as_bytes()) } else { stderr.write_all(text.as_bytes()) };
            return code;
        }
    };
    let result = RunConfig::from_cli(cli).and_then(|cfg| run(&cfg, stdout));
    match result {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(stderr, "rdlasso: {e}");
            e.exit_code()
        }
    }
}
