//! Kernel-weighted Lasso by cyclic coordinate descent.
//!
//! The objective on a [`Design`] is
//!
//! ```text
//! (1/(n h)) sum_i K_i (Y_i - G_i' theta)^2 + lambda sum_{j penalized} psi_j s_j |theta_j|
//! ```
//!
//! where `s_j` is the kernel-weighted standard deviation of covariate column `j`
//! when standardization is on (so the penalty acts on standardized
//! coefficients) and `1` otherwise. The rows are rescaled by `sqrt(K_i)`, which
//! turns the problem into an ordinary weighted Lasso. Unpenalized columns are
//! updated jointly by a small least-squares solve each sweep.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use crate::error::{RdError, Result};
use crate::kernelfit::{equilibrated_rcond, weighted_ols, ColumnLabel, Design, RCOND_THRESHOLD};
use crate::stats::norm_ppf;

pub const DEFAULT_MAX_SWEEPS: usize = 100_000;
pub const DEFAULT_TOLERANCE: f64 = 1e-8;

/// Plug-in constants.
pub const PLUGIN_C: f64 = 1.1;
pub const PLUGIN_ALPHA: f64 = 0.1;
const PLUGIN_MAX_REFRESH: usize = 15;
const PLUGIN_REL_CHANGE: f64 = 0.01;

const CV_FOLDS: usize = 10;
const CV_GRID: usize = 50;
const CV_RATIO: f64 = 1e-4;
const CV_TIE: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LambdaRule {
    Fixed,
    #[default]
    Plugin,
    CrossValidation,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdRule {
    #[default]
    Support,
    ScaledThreshold,
}

/// Penalty specification for one Lasso fit.
#[derive(Debug, Clone, PartialEq)]
pub struct PenaltyConfig {
    pub lambda: f64,
    /// Design columns exempt from the penalty.
    pub unpenalized: Vec<usize>,
    /// Per-column loadings `psi_j` (one per design column); `None` means all ones.
    pub loadings: Option<Vec<f64>>,
    pub lambda_rule: LambdaRule,
    pub threshold_rule: ThresholdRule,
    pub standardize: bool,
    pub max_sweeps: usize,
    pub tolerance: f64,
}

impl PenaltyConfig {
    /// The base block of the design's layout is left unpenalized.
    pub fn partially_penalized(design: &Design, lambda: f64) -> Self {
        Self {
            unpenalized: (0..design.n_base()).collect(),
            ..Self::fully_penalized(lambda)
        }
    }

    /// Every column is penalized.
    pub fn fully_penalized(lambda: f64) -> Self {
        Self {
            lambda,
            unpenalized: Vec::new(),
            loadings: None,
            lambda_rule: LambdaRule::Fixed,
            threshold_rule: ThresholdRule::Support,
            standardize: true,
            max_sweeps: DEFAULT_MAX_SWEEPS,
            tolerance: DEFAULT_TOLERANCE,
        }
    }

    pub fn with_lambda(mut self, lambda: f64) -> Self {
        self.lambda = lambda;
        self
    }

    pub fn with_loadings(mut self, loadings: Vec<f64>) -> Self {
        self.loadings = Some(loadings);
        self
    }

    pub fn with_rule(mut self, rule: LambdaRule) -> Self {
        self.lambda_rule = rule;
        self
    }

    pub fn with_standardize(mut self, standardize: bool) -> Self {
        self.standardize = standardize;
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LassoFit {
    pub theta: Vec<f64>,
    /// Design columns with a nonzero coefficient.
    pub support: Vec<usize>,
    pub lambda_used: f64,
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
    pub max_change: f64,
    /// Effective per-column penalty `lambda psi_j s_j` (zero when unpenalized).
    pub penalty_weights: Vec<f64>,
    pub labels: Vec<ColumnLabel>,
}

impl LassoFit {
    pub fn ensure_converged(self) -> Result<Self> {
        if self.converged {
            Ok(self)
        } else {
            Err(RdError::NotConverged {
                iterations: self.iterations,
                max_change: self.max_change,
            })
        }
    }

    /// `(sample covariate index, coefficient)` for every covariate column.
    pub fn gamma(&self) -> Vec<(usize, f64)> {
        self.labels
            .iter()
            .zip(&self.theta)
            .filter_map(|(l, &t)| l.covariate().map(|j| (j, t)))
            .collect()
    }
}

/// Precomputed `sqrt(K)`-scaled problem data.
struct Problem {
    m: usize,
    norm: f64,
    xs: DMatrix<f64>,
    ys: Vec<f64>,
    col_sq: Vec<f64>,
    scale: Vec<f64>,
    unpen: Vec<usize>,
    pen: Vec<usize>,
    block: Option<Cholesky<f64, Dyn>>,
    block_gram: DMatrix<f64>,
}

impl Problem {
    fn new(design: &Design, unpenalized: &[usize], standardize: bool) -> Result<Self> {
        let k = design.ncols();
        if let Some(&bad) = unpenalized.iter().find(|&&j| j >= k) {
            return Err(RdError::invalid(format!("unpenalized column {bad} out of range")));
        }
        let m = design.n_loc();
        let norm = design.scale();
        let mut xs = design.g().clone();
        let sq: Vec<f64> = design.weights().iter().map(|k| k.sqrt()).collect();
        for (r, &s) in sq.iter().enumerate() {
            xs.row_mut(r).scale_mut(s);
        }
        let ys = design.response().iter().zip(&sq).map(|(y, s)| y * s).collect();
        let col_sq = (0..k)
            .map(|j| column(&xs, m, j).iter().map(|v| v * v).sum::<f64>() / norm)
            .collect();
        let scale = (0..k)
            .map(|j| {
                if standardize && design.labels()[j].covariate().is_some() {
                    weighted_sd(design, j)
                } else {
                    1.0
                }
            })
            .collect();
        let mut is_unpen = vec![false; k];
        for &j in unpenalized {
            is_unpen[j] = true;
        }
        let unpen: Vec<usize> = (0..k).filter(|&j| is_unpen[j]).collect();
        let pen: Vec<usize> = (0..k).filter(|&j| !is_unpen[j]).collect();
        let u = unpen.len();
        let mut block_gram = DMatrix::zeros(u, u);
        for (a, &ja) in unpen.iter().enumerate() {
            for (b, &jb) in unpen.iter().enumerate() {
                block_gram[(a, b)] = dot(column(&xs, m, ja), column(&xs, m, jb));
            }
        }
        let block = if u > 0 {
            let (rcond, _) = equilibrated_rcond(&(&block_gram / norm));
            if !(rcond >= RCOND_THRESHOLD) {
                return Err(RdError::SingularDesign { rcond });
            }
            Some(
                block_gram
                    .clone()
                    .cholesky()
                    .ok_or(RdError::SingularDesign { rcond })?,
            )
        } else {
            None
        };
        Ok(Self {
            m,
            norm,
            xs,
            ys,
            col_sq,
            scale,
            unpen,
            pen,
            block,
            block_gram,
        })
    }

    fn col(&self, j: usize) -> &[f64] {
        column(&self.xs, self.m, j)
    }

    fn residual(&self, theta: &[f64]) -> Vec<f64> {
        let mut r = self.ys.clone();
        for (j, &t) in theta.iter().enumerate() {
            if t != 0.0 {
                axpy(-t, self.col(j), &mut r);
            }
        }
        r
    }

    /// Re-solves the unpenalized block given the rest; returns the largest change.
    /// Skipped when no penalized coefficient moved since the last solve, which
    /// keeps the residual bit-stable once the penalized part has settled.
    fn block_update(&self, theta: &mut [f64], r: &mut [f64], dirty: &mut bool) -> f64 {
        let Some(chol) = &self.block else {
            return 0.0;
        };
        if !*dirty {
            return 0.0;
        }
        *dirty = false;
        let u = self.unpen.len();
        let cur = DVector::from_iterator(u, self.unpen.iter().map(|&j| theta[j]));
        let mut rhs = &self.block_gram * &cur;
        for (a, &j) in self.unpen.iter().enumerate() {
            rhs[a] += dot(self.col(j), r);
        }
        let new = chol.solve(&rhs);
        let mut change: f64 = 0.0;
        for (a, &j) in self.unpen.iter().enumerate() {
            let d = new[a] - cur[a];
            if d != 0.0 {
                axpy(-d, self.col(j), r);
                theta[j] = new[a];
                change = change.max(d.abs());
            }
        }
        change
    }

    fn fixed_zero(&self, j: usize) -> bool {
        !(self.col_sq[j] > 0.0) || !(self.scale[j] > 0.0)
    }

    /// One coordinate step; returns the absolute change.
    fn coord_update(&self, j: usize, pw: f64, theta: &mut [f64], r: &mut [f64], dirty: &mut bool) -> f64 {
        if self.fixed_zero(j) {
            return 0.0;
        }
        let a = self.col_sq[j];
        let old = theta[j];
        let z = a * old + dot(self.col(j), r) / self.norm;
        let new = if 2.0 * z.abs() <= pw {
            0.0
        } else {
            (z - z.signum() * pw / 2.0) / a
        };
        let d = new - old;
        if d != 0.0 {
            axpy(-d, self.col(j), r);
            theta[j] = new;
            *dirty = true;
        }
        d.abs()
    }

    fn penalty_weights(&self, lambda: f64, loadings: &[f64]) -> Vec<f64> {
        let mut pw = vec![0.0; self.col_sq.len()];
        for &j in &self.pen {
            pw[j] = lambda * loadings[j] * self.scale[j];
        }
        pw
    }

    fn objective(&self, theta: &[f64], r: &[f64], pw: &[f64]) -> f64 {
        let loss = r.iter().map(|v| v * v).sum::<f64>() / self.norm;
        let pen: f64 = self.pen.iter().map(|&j| pw[j] * theta[j].abs()).sum();
        loss + pen
    }

    /// Coordinate descent from `theta` in place.
    fn solve(&self, pw: &[f64], theta: &mut [f64], max_sweeps: usize, tol: f64) -> (usize, bool, f64) {
        let mut r = self.residual(theta);
        let mut dirty = true;
        let mut sweeps = 0;
        let mut last = f64::INFINITY;
        // Relative to the penalized coefficients only, so an outcome shift that
        // moves the intercept does not loosen the stopping rule.
        let limit = |theta: &[f64]| tol * (1.0 + self.pen.iter().fold(0.0_f64, |m, &j| m.max(theta[j].abs())));
        while sweeps < max_sweeps {
            let mut change = self.block_update(theta, &mut r, &mut dirty);
            for &j in &self.pen {
                change = change.max(self.coord_update(j, pw[j], theta, &mut r, &mut dirty));
            }
            sweeps += 1;
            last = change;
            if change < limit(theta) {
                return (sweeps, true, change);
            }
            // Iterate on the active set until it settles, then re-check all.
            let active: Vec<usize> = self.pen.iter().copied().filter(|&j| theta[j] != 0.0).collect();
            while sweeps < max_sweeps {
                let mut change = self.block_update(theta, &mut r, &mut dirty);
                for &j in &active {
                    change = change.max(self.coord_update(j, pw[j], theta, &mut r, &mut dirty));
                }
                sweeps += 1;
                last = change;
                if change < limit(theta) {
                    break;
                }
            }
        }
        (sweeps, false, last)
    }

    /// Residual of the unpenalized-only least-squares fit (zero penalized coefficients).
    fn null_residual(&self) -> Vec<f64> {
        let mut theta = vec![0.0; self.col_sq.len()];
        let mut r = self.ys.clone();
        self.block_update(&mut theta, &mut r, &mut true);
        r
    }
}

fn column(xs: &DMatrix<f64>, m: usize, j: usize) -> &[f64] {
    &xs.as_slice()[j * m..(j + 1) * m]
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Kernel-weighted standard deviation of a design column.
pub(crate) fn weighted_sd(design: &Design, j: usize) -> f64 {
    let w = design.weights();
    let col = design.g().column(j);
    let sw: f64 = w.iter().sum();
    let mean = w.iter().zip(col.iter()).map(|(k, v)| k * v).sum::<f64>() / sw;
    let var = w
        .iter()
        .zip(col.iter())
        .map(|(k, v)| k * (v - mean) * (v - mean))
        .sum::<f64>()
        / sw;
    // Treat round-off level spread as constant.
    if var <= 1e-24 * (mean * mean).max(f64::MIN_POSITIVE) {
        0.0
    } else {
        var.sqrt()
    }
}

fn resolve_loadings(design: &Design, penalty: &PenaltyConfig) -> Result<Vec<f64>> {
    let k = design.ncols();
    match &penalty.loadings {
        None => Ok(vec![1.0; k]),
        Some(l) if l.len() != k => Err(RdError::invalid(format!(
            "{} penalty loadings for {k} design columns",
            l.len()
        ))),
        Some(l) if l.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) => {
            Err(RdError::invalid("penalty loadings must be finite and nonnegative"))
        }
        Some(l) => Ok(l.clone()),
    }
}

/// Minimizes the kernel-weighted penalized objective by coordinate descent.
///
/// A fit that exhausts the sweep budget is returned with `converged = false`.
pub fn fit_local_lasso(design: &Design, penalty: &PenaltyConfig) -> Result<LassoFit> {
    fit_from(design, penalty, None)
}

fn fit_from(design: &Design, penalty: &PenaltyConfig, init: Option<&[f64]>) -> Result<LassoFit> {
    if !(penalty.lambda >= 0.0 && penalty.lambda.is_finite()) {
        return Err(RdError::invalid(format!(
            "lambda must be finite and nonnegative, got {}",
            penalty.lambda
        )));
    }
    if design.n_loc() == 0 {
        return Err(RdError::invalid("design has no rows"));
    }
    let loadings = resolve_loadings(design, penalty)?;
    let prob = Problem::new(design, &penalty.unpenalized, penalty.standardize)?;
    fit_problem(&prob, design, penalty.lambda, &loadings, penalty, init)
}

fn fit_problem(
    prob: &Problem,
    design: &Design,
    lambda: f64,
    loadings: &[f64],
    penalty: &PenaltyConfig,
    init: Option<&[f64]>,
) -> Result<LassoFit> {
    let k = design.ncols();
    let pw = prob.penalty_weights(lambda, loadings);
    let mut theta = match init {
        Some(t) if t.len() == k => t.to_vec(),
        _ => vec![0.0; k],
    };
    for j in 0..k {
        if prob.fixed_zero(j) {
            theta[j] = 0.0;
        }
    }
    let (iterations, converged, max_change) =
        prob.solve(&pw, &mut theta, penalty.max_sweeps, penalty.tolerance);
    let r = prob.residual(&theta);
    let objective = prob.objective(&theta, &r, &pw);
    let support = (0..k).filter(|&j| theta[j] != 0.0).collect();
    Ok(LassoFit {
        theta,
        support,
        lambda_used: lambda,
        objective,
        iterations,
        converged,
        max_change,
        penalty_weights: pw,
        labels: design.labels().to_vec(),
    })
}

/// Smallest `lambda` at which every penalized coefficient is exactly zero.
pub fn lambda_max(design: &Design, penalty: &PenaltyConfig) -> Result<f64> {
    let loadings = resolve_loadings(design, penalty)?;
    let prob = Problem::new(design, &penalty.unpenalized, penalty.standardize)?;
    Ok(lambda_max_problem(&prob, &loadings))
}

fn lambda_max_problem(prob: &Problem, loadings: &[f64]) -> f64 {
    let r0 = prob.null_residual();
    let grads: Vec<(usize, f64)> = prob
        .pen
        .iter()
        .filter(|&&j| !prob.fixed_zero(j))
        .map(|&j| (j, 2.0 * (dot(prob.col(j), &r0) / prob.norm).abs()))
        .collect();
    let mut lam = 0.0_f64;
    for &(j, g) in &grads {
        let d = loadings[j] * prob.scale[j];
        if d > 0.0 {
            lam = lam.max(g / d);
        }
    }
    // Guard against round-off in lambda * psi * s.
    while grads
        .iter()
        .any(|&(j, g)| loadings[j] * prob.scale[j] > 0.0 && g > lam * loadings[j] * prob.scale[j])
    {
        lam = lam.next_up();
    }
    lam
}

/// `2 c Phi^{-1}(1 - alpha / (2 p)) / sqrt(n_loc)`.
pub fn plugin_lambda_core(p: usize, n_loc: usize, c: f64, alpha: f64) -> f64 {
    2.0 * c * norm_ppf(1.0 - alpha / (2.0 * p as f64)) / (n_loc as f64).sqrt()
}

/// A data-driven penalty level and the loadings it was paired with.
#[derive(Debug, Clone, PartialEq)]
pub struct PenaltyChoice {
    pub lambda: f64,
    pub loadings: Vec<f64>,
    pub iterations: usize,
}

impl PenaltyChoice {
    pub fn apply(&self, template: &PenaltyConfig) -> PenaltyConfig {
        PenaltyConfig {
            lambda: self.lambda,
            loadings: Some(self.loadings.clone()),
            ..template.clone()
        }
    }
}

/// Chooses `lambda` (and loadings for the plug-in rule) according to the template's rule.
pub fn select_lambda(design: &Design, template: &PenaltyConfig) -> Result<PenaltyChoice> {
    match template.lambda_rule {
        LambdaRule::Fixed => Ok(PenaltyChoice {
            lambda: template.lambda,
            loadings: resolve_loadings(design, template)?,
            iterations: 0,
        }),
        LambdaRule::Plugin => plugin_choice(design, template, None),
        LambdaRule::CrossValidation => cv_choice(design, template),
    }
}

/// Plug-in rule; `lambda_override` keeps a given level and only iterates the loadings.
pub(crate) fn plugin_choice(
    design: &Design,
    template: &PenaltyConfig,
    lambda_override: Option<f64>,
) -> Result<PenaltyChoice> {
    let prob = Problem::new(design, &template.unpenalized, template.standardize)?;
    let p = prob.pen.len();
    if p == 0 {
        return Err(RdError::invalid("plug-in lambda needs at least one penalized column"));
    }
    let lambda = lambda_override.unwrap_or_else(|| plugin_lambda_core(p, design.n_loc(), PLUGIN_C, PLUGIN_ALPHA));

    let base: Vec<usize> = (0..design.n_base()).collect();
    let pilot = weighted_ols(&design.select_columns(&base))?;
    let mut resid = pilot.residuals;
    check_residuals(design, &resid)?;

    let std_cols: Vec<Option<Vec<f64>>> = (0..design.ncols())
        .map(|j| standardized_column(design, j, prob.scale[j], template.standardize))
        .collect();
    let mut loadings = compute_loadings(design, &std_cols, &resid, &prob.pen);
    let mut iterations = 0;
    for _ in 0..PLUGIN_MAX_REFRESH {
        let fit = fit_problem(&prob, design, lambda, &loadings, template, None)?;
        let post = post_lasso(design, &fit.support_with_base(design.n_base()))?;
        resid = design
            .response()
            .iter()
            .enumerate()
            .map(|(r, y)| y - (0..design.ncols()).map(|c| design.g()[(r, c)] * post[c]).sum::<f64>())
            .collect();
        let next = compute_loadings(design, &std_cols, &resid, &prob.pen);
        iterations += 1;
        let rel = prob
            .pen
            .iter()
            .map(|&j| {
                let (a, b) = (loadings[j], next[j]);
                if a == b {
                    0.0
                } else {
                    (a - b).abs() / a.abs().max(b.abs())
                }
            })
            .fold(0.0_f64, f64::max);
        loadings = next;
        if rel < PLUGIN_REL_CHANGE {
            break;
        }
    }
    Ok(PenaltyChoice {
        lambda,
        loadings,
        iterations,
    })
}

fn check_residuals(design: &Design, resid: &[f64]) -> Result<()> {
    let w = design.weights();
    let sw: f64 = w.iter().sum();
    let rv = w.iter().zip(resid).map(|(k, e)| k * e * e).sum::<f64>() / sw;
    let yv = w
        .iter()
        .zip(design.response())
        .map(|(k, y)| k * y * y)
        .sum::<f64>()
        / sw;
    if rv <= 1e-20 * yv.max(f64::MIN_POSITIVE) {
        return Err(RdError::DegenerateResiduals);
    }
    Ok(())
}

fn standardized_column(design: &Design, j: usize, s: f64, standardize: bool) -> Option<Vec<f64>> {
    let col = design.g().column(j);
    if !standardize || design.labels()[j].covariate().is_none() {
        return Some(col.iter().copied().collect());
    }
    if !(s > 0.0) {
        return None;
    }
    let w = design.weights();
    let sw: f64 = w.iter().sum();
    let mean = w.iter().zip(col.iter()).map(|(k, v)| k * v).sum::<f64>() / sw;
    Some(col.iter().map(|v| (v - mean) / s).collect())
}

fn compute_loadings(
    design: &Design,
    std_cols: &[Option<Vec<f64>>],
    resid: &[f64],
    pen: &[usize],
) -> Vec<f64> {
    let mut out = vec![1.0; design.ncols()];
    let w = design.weights();
    for &j in pen {
        out[j] = match &std_cols[j] {
            Some(col) => (w
                .iter()
                .zip(col)
                .zip(resid)
                .map(|((k, x), e)| k * x * x * e * e)
                .sum::<f64>()
                / design.scale())
            .sqrt(),
            None => 1.0,
        };
    }
    out
}

impl LassoFit {
    /// Support together with the first `n_base` columns, sorted.
    pub fn support_with_base(&self, n_base: usize) -> Vec<usize> {
        let mut s: Vec<usize> = (0..n_base).collect();
        s.extend(self.support.iter().copied().filter(|&j| j >= n_base));
        s
    }
}

/// Deterministic fold assignment: the `k`-th row on each side goes to fold `k mod folds`.
pub fn cv_folds(design: &Design, folds: usize) -> Vec<usize> {
    let mut counters = [0usize; 2];
    design
        .treated()
        .iter()
        .map(|&t| {
            let c = &mut counters[t as usize];
            let f = *c % folds;
            *c += 1;
            f
        })
        .collect()
}

fn cv_choice(design: &Design, template: &PenaltyConfig) -> Result<PenaltyChoice> {
    let unit = vec![1.0; design.ncols()];
    let full = Problem::new(design, &template.unpenalized, template.standardize)?;
    if full.pen.is_empty() {
        return Err(RdError::invalid("cross-validation needs at least one penalized column"));
    }
    let lmax = lambda_max_problem(&full, &unit);
    if !(lmax > 0.0) {
        return Ok(PenaltyChoice {
            lambda: 0.0,
            loadings: unit,
            iterations: 0,
        });
    }
    let grid: Vec<f64> = (0..CV_GRID)
        .map(|g| lmax * CV_RATIO.powf(g as f64 / (CV_GRID - 1) as f64))
        .collect();
    let fold_of = cv_folds(design, CV_FOLDS);
    let mut errors = vec![0.0; CV_GRID];
    let mut iterations = 0;
    for f in 0..CV_FOLDS {
        let train: Vec<usize> = (0..design.n_loc()).filter(|&r| fold_of[r] != f).collect();
        let test: Vec<usize> = (0..design.n_loc()).filter(|&r| fold_of[r] == f).collect();
        if test.is_empty() {
            continue;
        }
        let tr = design.select_rows(&train);
        let prob = Problem::new(&tr, &template.unpenalized, template.standardize)?;
        let mut warm: Option<Vec<f64>> = None;
        for (g, &lam) in grid.iter().enumerate() {
            let fit = fit_problem(&prob, &tr, lam, &unit, template, warm.as_deref())?;
            iterations += fit.iterations;
            errors[g] += test
                .iter()
                .map(|&r| {
                    let pred: f64 = (0..design.ncols()).map(|c| design.g()[(r, c)] * fit.theta[c]).sum();
                    let e = design.response()[r] - pred;
                    design.weights()[r] * e * e
                })
                .sum::<f64>();
            warm = Some(fit.theta);
        }
    }
    let mut best = 0;
    for g in 1..CV_GRID {
        if errors[g] < errors[best] - CV_TIE {
            best = g;
        }
    }
    Ok(PenaltyChoice {
        lambda: grid[best],
        loadings: unit,
        iterations,
    })
}

/// The CV grid for a design: `lambda_max` down to `1e-4 lambda_max`, log-spaced.
pub fn cv_grid(design: &Design, template: &PenaltyConfig) -> Result<Vec<f64>> {
    let unit = vec![1.0; design.ncols()];
    let prob = Problem::new(design, &template.unpenalized, template.standardize)?;
    let lmax = lambda_max_problem(&prob, &unit);
    Ok((0..CV_GRID)
        .map(|g| lmax * CV_RATIO.powf(g as f64 / (CV_GRID - 1) as f64))
        .collect())
}

/// Weighted least squares on the listed columns; other coefficients are exact zeros.
pub fn post_lasso(design: &Design, support: &[usize]) -> Result<Vec<f64>> {
    let mut cols = support.to_vec();
    cols.sort_unstable();
    cols.dedup();
    if let Some(&bad) = cols.iter().find(|&&c| c >= design.ncols()) {
        return Err(RdError::invalid(format!("support column {bad} out of range")));
    }
    if (0..design.n_base()).any(|c| !cols.contains(&c)) {
        return Err(RdError::invalid("post-Lasso support must contain the base block"));
    }
    let fit = weighted_ols(&design.select_columns(&cols))?;
    let mut out = vec![0.0; design.ncols()];
    for (i, &c) in cols.iter().enumerate() {
        out[c] = fit.coefficients[i];
    }
    Ok(out)
}

/// `ln ln ln n`.
pub fn rho_n(n: usize) -> f64 {
    (n as f64).ln().ln().ln()
}

/// Covariates (sample indices) retained by a selection rule.
pub fn selection_set(fit: &LassoFit, rule: ThresholdRule, n: usize, lambda: f64) -> Result<Vec<usize>> {
    let gamma = fit.gamma();
    match rule {
        ThresholdRule::Support => Ok(gamma.iter().filter(|(_, g)| *g != 0.0).map(|(j, _)| *j).collect()),
        ThresholdRule::ScaledThreshold => {
            if n < 16 {
                return Err(RdError::invalid("scaled threshold rule needs n >= 16"));
            }
            let nz = gamma.iter().filter(|(_, g)| *g != 0.0).count() as f64;
            let thr = lambda * rho_n(n) * nz;
            Ok(gamma.iter().filter(|(_, g)| g.abs() > thr).map(|(j, _)| *j).collect())
        }
    }
}
