use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::dgp::{draw_sample, true_tau, DgpSpec};
use crate::error::{RdError, Result};
use crate::kernelfit::KernelFamily;
use crate::lasso::ThresholdRule;
use crate::localpoly::{BandwidthSelector, VarianceEstimator};
use crate::rdd::{estimate, BandwidthMode, LambdaChoice, Method, RddEstimate, RddRequest};

/// One estimator column of the simulation tables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSpec {
    pub name: String,
    pub method: Method,
    pub bandwidth: BandwidthMode,
}

impl MethodSpec {
    pub fn new(name: impl Into<String>, method: Method, bandwidth: BandwidthMode) -> Self {
        Self {
            name: name.into(),
            method,
            bandwidth,
        }
    }
}

/// The four columns of the point-estimation and inference tables, in order.
pub fn table_methods() -> Vec<MethodSpec> {
    vec![
        MethodSpec::new("standard", Method::Standard, BandwidthMode::AutoWithoutCovariates),
        MethodSpec::new("adjusted_nocov_bw", Method::CovariateAdjusted, BandwidthMode::AutoWithoutCovariates),
        MethodSpec::new("adjusted_cov_bw", Method::CovariateAdjusted, BandwidthMode::AutoWithCovariates),
        MethodSpec::new("selection", Method::CovariateSelection, BandwidthMode::Adaptive),
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McConfig {
    pub level: f64,
    pub kernel: KernelFamily,
    pub lambda: LambdaChoice,
    pub selection: ThresholdRule,
    pub hb_restricted: bool,
    pub variance: VarianceEstimator,
    pub selector: BandwidthSelector,
    pub regularization: f64,
    /// Worker threads; `None` uses the global rayon pool.
    pub threads: Option<usize>,
}

impl Default for McConfig {
    fn default() -> Self {
        Self {
            level: 0.95,
            kernel: KernelFamily::Triangular,
            lambda: LambdaChoice::Plugin,
            selection: ThresholdRule::Support,
            hb_restricted: false,
            variance: VarianceEstimator::default(),
            selector: BandwidthSelector::ThreeStep,
            regularization: 1.0,
            threads: None,
        }
    }
}

/// What a single replication records for one method.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RepOutcome {
    pub tau_hat: f64,
    pub covered: bool,
    pub length: f64,
    pub h: f64,
    pub b: f64,
    pub selected: usize,
}

impl RepOutcome {
    fn from_estimate(e: &RddEstimate, tau: f64) -> Self {
        Self {
            tau_hat: e.tau_hat,
            covered: e.ci.contains(tau),
            length: e.ci.length(),
            h: e.bandwidths.h,
            b: e.bandwidths.b,
            selected: e.selected.len(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub name: String,
    pub method: Method,
    pub bandwidth: BandwidthMode,
    pub successes: usize,
    pub failures: usize,
    pub bias: f64,
    pub rmse: f64,
    pub coverage: f64,
    /// Binomial standard error of `coverage`.
    pub coverage_se: f64,
    pub mean_length: f64,
    pub h_mean: f64,
    pub h_sd: f64,
    pub b_mean: f64,
    pub selected_mean: f64,
    pub selected_min: usize,
    pub selected_max: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McSummary {
    pub spec: DgpSpec,
    pub reps: usize,
    pub level: f64,
    pub true_tau: f64,
    pub methods: Vec<MethodSummary>,
}

impl McSummary {
    pub fn method(&self, name: &str) -> Option<&MethodSummary> {
        self.methods.iter().find(|m| m.name == name)
    }
}

#[derive(Debug, Clone, Default)]
struct Accumulator {
    n: usize,
    failures: usize,
    err: f64,
    err2: f64,
    covered: usize,
    length: f64,
    h: f64,
    h2: f64,
    b: f64,
    sel: usize,
    sel_min: Option<usize>,
    sel_max: usize,
}

impl Accumulator {
    fn push(&mut self, r: &Result<RepOutcome>, tau: f64) {
        let Ok(r) = r else {
            self.failures += 1;
            return;
        };
        let e = r.tau_hat - tau;
        self.n += 1;
        self.err += e;
        self.err2 += e * e;
        self.covered += r.covered as usize;
        self.length += r.length;
        self.h += r.h;
        self.h2 += r.h * r.h;
        self.b += r.b;
        self.sel += r.selected;
        self.sel_min = Some(self.sel_min.map_or(r.selected, |m| m.min(r.selected)));
        self.sel_max = self.sel_max.max(r.selected);
    }

    fn finish(self, m: &MethodSpec) -> MethodSummary {
        let k = self.n as f64;
        let cp = self.covered as f64 / k;
        let h_mean = self.h / k;
        let h_var = if self.n > 1 {
            ((self.h2 - k * h_mean * h_mean) / (k - 1.0)).max(0.0)
        } else {
            0.0
        };
        MethodSummary {
            name: m.name.clone(),
            method: m.method,
            bandwidth: m.bandwidth,
            successes: self.n,
            failures: self.failures,
            bias: self.err / k,
            rmse: (self.err2 / k).sqrt(),
            coverage: cp,
            coverage_se: (cp * (1.0 - cp) / k).sqrt(),
            mean_length: self.length / k,
            h_mean,
            h_sd: h_var.sqrt(),
            b_mean: self.b / k,
            selected_mean: self.sel as f64 / k,
            selected_min: self.sel_min.unwrap_or(0),
            selected_max: self.sel_max,
        }
    }
}

/// Runs every method on one replication's sample.
pub fn run_replication(spec: &DgpSpec, rep: u64, methods: &[MethodSpec], cfg: &McConfig) -> Vec<Result<RepOutcome>> {
    let sample = draw_sample(spec, rep);
    let tau = true_tau(spec);
    methods
        .iter()
        .map(|m| {
            let req = RddRequest::new(&sample)
                .method(m.method)
                .bandwidth(m.bandwidth)
                .kernel(cfg.kernel)
                .level(cfg.level)
                .hb_restricted(cfg.hb_restricted)
                .lambda(cfg.lambda)
                .selection(cfg.selection)
                .variance(cfg.variance)
                .regularization(cfg.regularization)
                .selector(cfg.selector);
            estimate(&req).map(|e| RepOutcome::from_estimate(&e, tau))
        })
        .collect()
}

/// Per-replication outcomes in replication order; `out[r][m]` is method `m`
/// on replication `r`.
pub fn run_replications(
    spec: &DgpSpec,
    reps: usize,
    methods: &[MethodSpec],
    cfg: &McConfig,
) -> Result<Vec<Vec<Result<RepOutcome>>>> {
    spec.validate()?;
    if reps == 0 {
        return Err(RdError::invalid("reps must be at least 1"));
    }
    if methods.is_empty() {
        return Err(RdError::invalid("no methods requested"));
    }
    if !(cfg.level > 0.0 && cfg.level < 1.0) {
        return Err(RdError::invalid(format!("confidence level must lie in (0, 1), got {}", cfg.level)));
    }
    let work = || -> Vec<_> {
        (0..reps as u64)
            .into_par_iter()
            .map(|r| run_replication(spec, r, methods, cfg))
            .collect()
    };
    match cfg.threads {
        Some(t) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(t.max(1))
                .build()
                .map_err(|e| RdError::invalid(format!("cannot start thread pool: {e}")))?;
            Ok(pool.install(work))
        }
        None => Ok(work()),
    }
}

/// Simulates `reps` replications and aggregates per method. Replication
/// errors are tallied in `failures`; the summary is independent of thread
/// count because outcomes are folded in replication order.
pub fn run_monte_carlo(spec: &DgpSpec, reps: usize, methods: &[MethodSpec], cfg: &McConfig) -> Result<McSummary> {
    let outcomes = run_replications(spec, reps, methods, cfg)?;
    Ok(summarize(spec, cfg.level, methods, &outcomes))
}

pub fn summarize(spec: &DgpSpec, level: f64, methods: &[MethodSpec], outcomes: &[Vec<Result<RepOutcome>>]) -> McSummary {
    let tau = true_tau(spec);
    let mut acc = vec![Accumulator::default(); methods.len()];
    for rep in outcomes {
        for (a, r) in acc.iter_mut().zip(rep) {
            a.push(r, tau);
        }
    }
    McSummary {
        spec: *spec,
        reps: outcomes.len(),
        level,
        true_tau: tau,
        methods: acc.into_iter().zip(methods).map(|(a, m)| a.finish(m)).collect(),
    }
}
