//! One-sided local polynomial fits, nearest-neighbor variance estimation,
//! bias and variance of the local linear jump estimator, and MSE-optimal
//! bandwidths.
//!
//! All estimators here are linear in the (adjusted) outcome, so they are
//! represented by explicit per-observation weight vectors. The jump estimate
//! is `sum_i l_i y_i`, the estimated leading bias is `sum_i c_i y_i`, and the
//! bias-corrected estimate uses the composite weights `l_i - h^2 c_i`; the
//! variances follow from the weights and per-observation deviations.

mod selector;

use std::fmt;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{RdError, Result};
use crate::kernelfit::{
    build_design, equilibrated_rcond, independent_columns, weighted_ols, KernelFamily, KernelSpec, Sample,
    RCOND_THRESHOLD,
};

/// Default number of neighbors for the variance estimator.
pub const DEFAULT_NEIGHBORS: usize = 3;
/// Rule-of-thumb constant of the pilot bandwidth `c * sd(x) * n^{-1/5}`.
pub const DEFAULT_PILOT_CONSTANT: f64 = 2.58;
/// Pivot tolerance used when dropping collinear covariates.
pub(crate) const COLLINEAR_TOL: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    /// `x < cutoff`
    Left,
    /// `x >= cutoff`
    Right,
}

impl Side {
    pub fn contains(self, xc: f64) -> bool {
        match self {
            Side::Left => xc < 0.0,
            Side::Right => xc >= 0.0,
        }
    }

    pub fn sign(self) -> f64 {
        match self {
            Side::Left => -1.0,
            Side::Right => 1.0,
        }
    }

    pub const BOTH: [Side; 2] = [Side::Left, Side::Right];
}

impl fmt::Display for Side {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Side::Left => "left",
            Side::Right => "right",
        })
    }
}

/// Linear weights of a one-sided polynomial fit: row `k` maps outcomes to `c_k`.
#[derive(Debug, Clone)]
pub(crate) struct PolyWeights {
    pub idx: Vec<usize>,
    pub w: DMatrix<f64>,
}

impl PolyWeights {
    pub fn apply(&self, k: usize, v: &[f64]) -> f64 {
        self.idx
            .iter()
            .enumerate()
            .map(|(c, &i)| self.w[(k, c)] * v[i])
            .sum()
    }

    /// `sum_i w_{k,i} x_i^power`.
    pub fn moment(&self, k: usize, xc: &[f64], power: i32) -> f64 {
        self.idx
            .iter()
            .enumerate()
            .map(|(c, &i)| self.w[(k, c)] * xc[i].powi(power))
            .sum()
    }

    /// `sum_i w_{k,i}^2 d_i^2`.
    pub fn variance(&self, k: usize, dev: &[f64]) -> f64 {
        self.idx
            .iter()
            .enumerate()
            .map(|(c, &i)| (self.w[(k, c)] * dev[i]).powi(2))
            .sum()
    }

    /// Adds `scale * row k` into a dense weight vector.
    pub fn add_row(&self, k: usize, scale: f64, out: &mut [f64]) {
        for (c, &i) in self.idx.iter().enumerate() {
            out[i] += scale * self.w[(k, c)];
        }
    }
}

/// Weights of the degree-`degree` fit on one side of zero with bandwidth `bw`.
pub(crate) fn poly_weights(
    xc: &[f64],
    side: Side,
    degree: usize,
    bw: f64,
    family: KernelFamily,
) -> Result<PolyWeights> {
    let mut idx = Vec::new();
    let mut kw = Vec::new();
    for (i, &x) in xc.iter().enumerate() {
        if side.contains(x) {
            let k = family.eval(x / bw);
            if k > 0.0 {
                idx.push(i);
                kw.push(k);
            }
        }
    }
    let d = degree + 1;
    if idx.len() < d {
        return Err(RdError::InsufficientData {
            side,
            needed: d,
            available: idx.len(),
        });
    }
    let m = idx.len();
    // Fit in u = x / bw for conditioning; K U' is (d x m).
    let mut ku = DMatrix::zeros(d, m);
    let mut gram = DMatrix::zeros(d, d);
    for (c, (&i, &k)) in idx.iter().zip(&kw).enumerate() {
        let u = xc[i] / bw;
        let mut pw = [0.0; 10];
        pw[0] = 1.0;
        for p in 1..(2 * d - 1) {
            pw[p] = pw[p - 1] * u;
        }
        for a in 0..d {
            ku[(a, c)] = k * pw[a];
            for b in 0..d {
                gram[(a, b)] += k * pw[a + b];
            }
        }
    }
    gram /= m as f64;
    let (rcond, _) = equilibrated_rcond(&gram);
    if !(rcond >= RCOND_THRESHOLD) {
        return Err(RdError::SingularDesign { rcond });
    }
    let chol = gram.cholesky().ok_or(RdError::SingularDesign { rcond })?;
    let mut w = chol.solve(&ku);
    w /= m as f64;
    for k in 1..d {
        let s = bw.powi(-(k as i32));
        w.row_mut(k).scale_mut(s);
    }
    Ok(PolyWeights { idx, w })
}

/// Coefficients `(c_0, ..., c_degree)` of a kernel-weighted polynomial fit to
/// the observations on `side` of zero; `x` must already be centered.
pub fn local_poly_fit(
    x: &[f64],
    y: &[f64],
    side: Side,
    degree: usize,
    bandwidth: f64,
    family: KernelFamily,
) -> Result<Vec<f64>> {
    if !(1..=3).contains(&degree) {
        return Err(RdError::invalid(format!("degree must be 1, 2 or 3, got {degree}")));
    }
    local_poly_fit_any(x, y, side, degree, bandwidth, family)
}

pub(crate) fn local_poly_fit_any(
    x: &[f64],
    y: &[f64],
    side: Side,
    degree: usize,
    bandwidth: f64,
    family: KernelFamily,
) -> Result<Vec<f64>> {
    if x.len() != y.len() {
        return Err(RdError::invalid("x and y lengths differ"));
    }
    KernelSpec::new(family, bandwidth)?;
    let pw = poly_weights(x, side, degree, bandwidth, family)?;
    Ok((0..=degree).map(|k| pw.apply(k, y)).collect())
}

/// Same-side nearest neighbors of every observation, ties broken by lower index.
#[derive(Debug, Clone)]
pub struct NeighborSets {
    j: usize,
    nbrs: Vec<usize>,
}

impl NeighborSets {
    pub fn new(xc: &[f64], j: usize) -> Result<Self> {
        if j == 0 {
            return Err(RdError::invalid("need at least one neighbor"));
        }
        let n = xc.len();
        let mut nbrs = vec![0usize; n * j];
        for side in Side::BOTH {
            let mut order: Vec<usize> = (0..n).filter(|&i| side.contains(xc[i])).collect();
            if order.len() < j + 1 {
                return Err(RdError::InsufficientData {
                    side,
                    needed: j + 1,
                    available: order.len(),
                });
            }
            order.sort_by(|&a, &b| xc[a].total_cmp(&xc[b]).then(a.cmp(&b)));
            let m = order.len();
            let mut cand: Vec<(f64, usize)> = Vec::with_capacity(4 * j);
            for pos in 0..m {
                let i = order[pos];
                cand.clear();
                // Walk outward in each direction, past the j-th distance while tied.
                let mut collect = |range: &mut dyn Iterator<Item = usize>| {
                    let mut taken = 0;
                    let mut last = f64::NAN;
                    for q in range {
                        let d = (xc[order[q]] - xc[i]).abs();
                        if taken >= j && d > last {
                            break;
                        }
                        cand.push((d, order[q]));
                        taken += 1;
                        last = d;
                    }
                };
                collect(&mut (0..pos).rev());
                collect(&mut (pos + 1..m));
                cand.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
                for (t, &(_, q)) in cand.iter().take(j).enumerate() {
                    nbrs[i * j + t] = q;
                }
            }
        }
        Ok(Self { j, nbrs })
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.nbrs[i * self.j..(i + 1) * self.j]
    }

    pub fn j(&self) -> usize {
        self.j
    }

    /// `sqrt(J/(J+1)) (v_i - mean of v over the neighbors of i)`.
    pub fn deviations(&self, v: &[f64]) -> Vec<f64> {
        let jf = self.j as f64;
        let f = (jf / (jf + 1.0)).sqrt();
        (0..v.len())
            .map(|i| {
                let mean = self.neighbors(i).iter().map(|&q| v[q]).sum::<f64>() / jf;
                f * (v[i] - mean)
            })
            .collect()
    }
}

/// Per-observation variance estimates `J/(J+1) (y_i - mean of neighbors)^2`.
pub fn nn_variance(sample: &Sample, j_neighbors: usize) -> Result<Vec<f64>> {
    let nn = NeighborSets::new(&sample.centered_x(), j_neighbors)?;
    Ok(nn.deviations(sample.y()).into_iter().map(|d| d * d).collect())
}

/// How per-observation error variances are estimated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VarianceEstimator {
    NearestNeighbor { neighbors: usize },
    /// Residuals of a one-sided local quadratic fit at the larger of the two bandwidths.
    PluginResidual,
}

impl Default for VarianceEstimator {
    fn default() -> Self {
        VarianceEstimator::NearestNeighbor {
            neighbors: DEFAULT_NEIGHBORS,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BandwidthPair {
    pub h: f64,
    pub b: f64,
    pub restricted: bool,
}

impl BandwidthPair {
    pub fn new(h: f64, b: f64) -> Result<Self> {
        if !(h > 0.0 && h.is_finite() && b > 0.0 && b.is_finite()) {
            return Err(RdError::invalid(format!("bandwidths must be positive, got h={h}, b={b}")));
        }
        Ok(Self {
            h,
            b,
            restricted: h == b,
        })
    }

    pub fn restricted(h: f64) -> Result<Self> {
        let mut p = Self::new(h, h)?;
        p.restricted = true;
        Ok(p)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BandwidthOptions {
    pub pilot_constant: f64,
    /// Force `b = h`.
    pub restricted: bool,
    pub variance: VarianceEstimator,
    pub selector: BandwidthSelector,
    /// Scale of the regularization term of the three-step selector.
    pub regularization: f64,
}

/// How the bandwidth pair is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BandwidthSelector {
    /// Bias and variance at the rule-of-thumb pilot `b0`; `b` from cubic fits at `b0`.
    #[default]
    TwoStep,
    /// Third-derivative pilot, then `b`, then `h`, each denominator
    /// regularized by the variance of its curvature estimate; covariate
    /// coefficients are refitted on each side at every step.
    ThreeStep,
}

impl Default for BandwidthOptions {
    fn default() -> Self {
        Self {
            pilot_constant: DEFAULT_PILOT_CONSTANT,
            restricted: false,
            variance: VarianceEstimator::default(),
            selector: BandwidthSelector::TwoStep,
            regularization: 1.0,
        }
    }
}

/// Weight vectors of the local linear jump estimator and its bias correction.
#[derive(Debug, Clone)]
pub(crate) struct SharpWeights {
    pub h: f64,
    /// `C_-` and `C_+`: `sum_i l_{s,i} (x_i / h)^2`.
    pub c: [f64; 2],
    pub intercept: [PolyWeights; 2],
    pub quad: [PolyWeights; 2],
    n: usize,
}

impl SharpWeights {
    pub fn new(xc: &[f64], family: KernelFamily, h: f64, b: f64) -> Result<Self> {
        let lin = [
            poly_weights(xc, Side::Left, 1, h, family)?,
            poly_weights(xc, Side::Right, 1, h, family)?,
        ];
        let quad = [
            poly_weights(xc, Side::Left, 2, b, family)?,
            poly_weights(xc, Side::Right, 2, b, family)?,
        ];
        let c = [
            lin[0].moment(0, xc, 2) / (h * h),
            lin[1].moment(0, xc, 2) / (h * h),
        ];
        Ok(Self {
            h,
            c,
            intercept: lin,
            quad,
            n: xc.len(),
        })
    }

    /// `l_+ - l_-` as a dense vector.
    pub fn conventional(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.n];
        self.intercept[0].add_row(0, -1.0, &mut out);
        self.intercept[1].add_row(0, 1.0, &mut out);
        out
    }

    /// Weights of the bias estimate `(C_+ mu2_+ - C_- mu2_-) / 2`.
    pub fn bias(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.n];
        // mu2 = 2 c_2, so half of it is c_2 itself.
        self.quad[0].add_row(2, -self.c[0], &mut out);
        self.quad[1].add_row(2, self.c[1], &mut out);
        out
    }

    /// Composite weights `l - h^2 c` of the bias-corrected estimator.
    pub fn robust(&self) -> Vec<f64> {
        let h2 = self.h * self.h;
        self.conventional()
            .iter()
            .zip(self.bias())
            .map(|(l, c)| l - h2 * c)
            .collect()
    }

    pub fn mu2(&self, side: Side, v: &[f64]) -> f64 {
        2.0 * self.quad[side_index(side)].apply(2, v)
    }
}

pub(crate) fn side_index(side: Side) -> usize {
    match side {
        Side::Left => 0,
        Side::Right => 1,
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `sum_i w_i^2 d_i^2`.
pub(crate) fn weighted_square(w: &[f64], dev: &[f64]) -> f64 {
    w.iter().zip(dev).map(|(a, d)| a * a * d * d).sum()
}

/// Per-observation deviations used as `sqrt(sigma_i^2)` in variance formulas.
pub(crate) fn deviations(
    xc: &[f64],
    v: &[f64],
    estimator: VarianceEstimator,
    nn: Option<&NeighborSets>,
    family: KernelFamily,
    bw: f64,
) -> Result<Vec<f64>> {
    match estimator {
        VarianceEstimator::NearestNeighbor { neighbors } => match nn {
            Some(nn) if nn.j() == neighbors => Ok(nn.deviations(v)),
            _ => Ok(NeighborSets::new(xc, neighbors)?.deviations(v)),
        },
        VarianceEstimator::PluginResidual => {
            let mut out = vec![0.0; v.len()];
            for side in Side::BOTH {
                let pw = poly_weights(xc, side, 2, bw, family)?;
                let c: Vec<f64> = (0..3).map(|k| pw.apply(k, v)).collect();
                for &i in &pw.idx {
                    let x = xc[i];
                    out[i] = v[i] - (c[0] + c[1] * x + c[2] * x * x);
                }
            }
            Ok(out)
        }
    }
}

/// Estimated bias and variance of the local linear jump estimator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasVariance {
    /// Leading bias constant; the estimator's bias is `h^2 * bias`.
    pub bias: f64,
    /// `n h` times the variance of the conventional estimator.
    pub variance: f64,
    /// `n h` times the variance of the bias-corrected estimator.
    pub variance_robust: f64,
    /// `(1, -gamma')'`.
    pub q_bar: Vec<f64>,
    /// Second derivatives of the outcome, then of each selected covariate.
    pub mu2_minus: Vec<f64>,
    pub mu2_plus: Vec<f64>,
    /// Average outer products of the deviations of `(Y, Z_sel)` within `h`.
    pub sigma_minus: Vec<Vec<f64>>,
    pub sigma_plus: Vec<Vec<f64>>,
    pub tau: f64,
    pub tau_bc: f64,
    pub se_conventional: f64,
    pub se_robust: f64,
    pub bandwidths: BandwidthPair,
}

fn validate_selection(sample: &Sample, selected: &[usize], gamma_bar: &[f64]) -> Result<()> {
    if selected.len() != gamma_bar.len() {
        return Err(RdError::invalid(format!(
            "{} selected covariates but {} coefficients",
            selected.len(),
            gamma_bar.len()
        )));
    }
    if let Some(&bad) = selected.iter().find(|&&j| j >= sample.p()) {
        return Err(RdError::invalid(format!("covariate index {bad} out of range")));
    }
    Ok(())
}

/// Scalar summaries at a given bandwidth pair, without the covariate blocks.
#[derive(Debug, Clone)]
pub(crate) struct SharpCore {
    pub weights: SharpWeights,
    pub tau: f64,
    pub bias: f64,
    pub tau_bc: f64,
    pub se_conventional: f64,
    pub se_robust: f64,
}

pub(crate) fn sharp_core(
    xc: &[f64],
    ytilde: &[f64],
    dev: &[f64],
    family: KernelFamily,
    bw: BandwidthPair,
) -> Result<SharpCore> {
    let weights = SharpWeights::new(xc, family, bw.h, bw.b)?;
    let conv = weights.conventional();
    let bias_w = weights.bias();
    let h2 = bw.h * bw.h;
    let rob: Vec<f64> = conv.iter().zip(&bias_w).map(|(l, c)| l - h2 * c).collect();
    let tau = dot(&conv, ytilde);
    let bias = dot(&bias_w, ytilde);
    let tau_bc = dot(&rob, ytilde);
    Ok(SharpCore {
        tau,
        bias,
        tau_bc,
        se_conventional: weighted_square(&conv, dev).sqrt(),
        se_robust: weighted_square(&rob, dev).sqrt(),
        weights,
    })
}

/// Full bias/variance report for outcome `Y - Z_sel gamma_bar` at `bandwidths`.
pub fn bias_variance_estimates(
    sample: &Sample,
    selected: &[usize],
    gamma_bar: &[f64],
    bandwidths: BandwidthPair,
    family: KernelFamily,
) -> Result<BiasVariance> {
    bias_variance_with(sample, selected, gamma_bar, bandwidths, family, VarianceEstimator::default())
}

pub fn bias_variance_with(
    sample: &Sample,
    selected: &[usize],
    gamma_bar: &[f64],
    bandwidths: BandwidthPair,
    family: KernelFamily,
    estimator: VarianceEstimator,
) -> Result<BiasVariance> {
    validate_selection(sample, selected, gamma_bar)?;
    let xc = sample.centered_x();
    let nn = match estimator {
        VarianceEstimator::NearestNeighbor { neighbors } => Some(NeighborSets::new(&xc, neighbors)?),
        VarianceEstimator::PluginResidual => None,
    };
    let ytilde = sample.adjusted_outcome(sample.y(), selected, gamma_bar);
    let bw_dev = bandwidths.h.max(bandwidths.b);
    let dev = deviations(&xc, &ytilde, estimator, nn.as_ref(), family, bw_dev)?;
    let core = sharp_core(&xc, &ytilde, &dev, family, bandwidths)?;

    let mut series: Vec<Vec<f64>> = vec![sample.y().to_vec()];
    for &j in selected {
        series.push(sample.z().column(j).iter().copied().collect());
    }
    let devs: Vec<Vec<f64>> = series
        .iter()
        .map(|s| deviations(&xc, s, estimator, nn.as_ref(), family, bw_dev))
        .collect::<Result<_>>()?;
    let mu2 = |side| series.iter().map(|s| core.weights.mu2(side, s)).collect::<Vec<_>>();
    let sigma = |side: Side| -> Result<Vec<Vec<f64>>> {
        let idx = &core.weights.intercept[side_index(side)].idx;
        let q = devs.len();
        let mut m = DMatrix::zeros(q, q);
        for &i in idx {
            for a in 0..q {
                for b in 0..=a {
                    m[(a, b)] += devs[a][i] * devs[b][i];
                }
            }
        }
        for a in 0..q {
            for b in 0..a {
                m[(b, a)] = m[(a, b)];
            }
        }
        m /= idx.len() as f64;
        project_psd(m)
    };
    let nh = sample.n() as f64 * bandwidths.h;
    let mut q_bar = vec![1.0];
    q_bar.extend(gamma_bar.iter().map(|g| -g));
    Ok(BiasVariance {
        bias: core.bias,
        variance: nh * core.se_conventional.powi(2),
        variance_robust: nh * core.se_robust.powi(2),
        q_bar,
        mu2_minus: mu2(Side::Left),
        mu2_plus: mu2(Side::Right),
        sigma_minus: sigma(Side::Left)?,
        sigma_plus: sigma(Side::Right)?,
        tau: core.tau,
        tau_bc: core.tau_bc,
        se_conventional: core.se_conventional,
        se_robust: core.se_robust,
        bandwidths,
    })
}

/// Clips tiny negative eigenvalues; rejects clearly indefinite matrices.
pub(crate) fn project_psd(m: DMatrix<f64>) -> Result<Vec<Vec<f64>>> {
    let q = m.nrows();
    let to_rows = |m: &DMatrix<f64>| (0..q).map(|a| m.row(a).iter().copied().collect()).collect();
    if q == 0 {
        return Ok(Vec::new());
    }
    let eig = m.clone().symmetric_eigen();
    let min = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
    if min >= 0.0 {
        return Ok(to_rows(&m));
    }
    if min < -1e-10 {
        return Err(RdError::NonPsdCovariance { min_eigenvalue: min });
    }
    let vals = eig.eigenvalues.map(|v| v.max(0.0));
    let rebuilt = &eig.eigenvectors * DMatrix::from_diagonal(&vals) * eig.eigenvectors.transpose();
    let sym = (&rebuilt + rebuilt.transpose()) * 0.5;
    Ok(to_rows(&sym))
}

/// Sample standard deviation (denominator `n - 1`).
pub(crate) fn sample_sd(v: &[f64]) -> f64 {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    (v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0).max(1.0)).sqrt()
}

/// Distance from the cutoff to the far end of the shorter side.
pub(crate) fn range_cap(xc: &[f64]) -> f64 {
    let left = xc.iter().filter(|&&x| x < 0.0).fold(0.0_f64, |m, &x| m.max(-x));
    let right = xc.iter().filter(|&&x| x >= 0.0).fold(0.0_f64, |m, &x| m.max(x));
    left.min(right)
}

pub(crate) fn pilot_bandwidth(xc: &[f64], constant: f64) -> f64 {
    let n = xc.len() as f64;
    (constant * sample_sd(xc) * n.powf(-0.2)).min(range_cap(xc))
}

/// Minimizer of `h^{2r} B^2 + V / (n h^{2s+1})`-type objectives, capped; `None`
/// signals a degenerate bias estimate.
pub(crate) fn capped_rule(value: Option<f64>, cap: f64) -> f64 {
    match value {
        Some(v) if v.is_finite() && v > 0.0 => v.min(cap),
        _ => cap,
    }
}

/// `(V / (4 n B^2))^{1/5}`, or `None` when the curvature estimate is negligible.
pub fn mse_rule(bias: f64, variance: f64, n: usize) -> Option<f64> {
    if bias == 0.0 || bias * bias < 1e-12 * variance {
        return None;
    }
    Some((variance / (4.0 * n as f64 * bias * bias)).powf(0.2))
}

/// Bandwidth pair for the jump estimator applied to the already adjusted outcome.
pub(crate) fn sharp_bandwidth(
    xc: &[f64],
    ytilde: &[f64],
    family: KernelFamily,
    options: &BandwidthOptions,
    nn: Option<&NeighborSets>,
) -> Result<BandwidthPair> {
    let n = xc.len();
    let cap = range_cap(xc);
    if !(cap > 0.0) {
        let side = if xc.iter().any(|&x| x < 0.0) { Side::Right } else { Side::Left };
        return Err(RdError::EmptySide { side });
    }
    let b0 = pilot_bandwidth(xc, options.pilot_constant);
    let dev = deviations(xc, ytilde, options.variance, nn, family, b0)?;
    let pilot = BandwidthPair { h: b0, b: b0, restricted: true };
    let core = sharp_core(xc, ytilde, &dev, family, pilot)?;
    let v_hat = n as f64 * b0 * core.se_conventional.powi(2);
    let h = capped_rule(mse_rule(core.bias, v_hat, n), cap);
    if options.restricted {
        return BandwidthPair::restricted(h);
    }

    // Pilot for the curvature term: bias from cubic fits, variance from the weights.
    let w = &core.weights;
    let mut target = vec![0.0; n];
    w.quad[0].add_row(2, -2.0 * w.c[0], &mut target);
    w.quad[1].add_row(2, 2.0 * w.c[1], &mut target);
    let mut bias_d = 0.0;
    for side in Side::BOTH {
        let s = side_index(side);
        let cub = poly_weights(xc, side, 3, b0, family)?;
        let c3 = cub.apply(3, ytilde);
        bias_d += side.sign() * w.c[s] * 2.0 * w.quad[s].moment(2, xc, 3) * c3;
    }
    let var_d = weighted_square(&target, &dev);
    let b_tilde = bias_d / b0;
    let v_tilde = var_d * n as f64 * b0.powi(5);
    let b = if b_tilde == 0.0 || b_tilde * b_tilde < 1e-12 * v_tilde {
        cap
    } else {
        capped_rule(Some((5.0 * v_tilde / (2.0 * n as f64 * b_tilde * b_tilde)).powf(1.0 / 7.0)), cap)
    };
    BandwidthPair::new(h, b)
}

/// Coefficients on the selected covariates from the weighted OLS fit at the
/// pilot bandwidth; collinear covariates get coefficient zero.
pub(crate) fn pilot_gamma(sample: &Sample, selected: &[usize], family: KernelFamily, bw: f64) -> Result<Vec<f64>> {
    if selected.is_empty() {
        return Ok(Vec::new());
    }
    let d = build_design(sample, &KernelSpec::new(family, bw)?, selected)?;
    let keep = independent_columns(&d, d.n_base(), COLLINEAR_TOL);
    let fit = weighted_ols(&d.select_columns(&keep))?;
    let mut gamma = vec![0.0; selected.len()];
    for (pos, &c) in keep.iter().enumerate() {
        if c >= d.n_base() {
            gamma[c - d.n_base()] = fit.coefficients[pos];
        }
    }
    Ok(gamma)
}

/// MSE-optimal `(h, b)` for the jump estimator with outcome `Y - Z_sel gamma`.
/// When `gamma_bar` is `None` the coefficients come from the pilot-bandwidth fit.
pub fn mse_optimal_bandwidth(
    sample: &Sample,
    selected: &[usize],
    gamma_bar: Option<&[f64]>,
    family: KernelFamily,
) -> Result<BandwidthPair> {
    mse_optimal_bandwidth_with(sample, selected, gamma_bar, family, &BandwidthOptions::default())
}

pub fn mse_optimal_bandwidth_with(
    sample: &Sample,
    selected: &[usize],
    gamma_bar: Option<&[f64]>,
    family: KernelFamily,
    options: &BandwidthOptions,
) -> Result<BandwidthPair> {
    if let Some(g) = gamma_bar {
        validate_selection(sample, selected, g)?;
    }
    if options.selector == BandwidthSelector::ThreeStep {
        if selected.iter().any(|&j| j >= sample.p()) {
            return Err(RdError::invalid("selected covariate index out of range"));
        }
        return selector::three_step_bandwidth(sample, selected, gamma_bar, family, options);
    }
    let xc = sample.centered_x();
    let gamma = match gamma_bar {
        Some(g) => g.to_vec(),
        None => pilot_gamma(sample, selected, family, pilot_bandwidth(&xc, options.pilot_constant))?,
    };
    validate_selection(sample, selected, &gamma)?;
    let ytilde = sample.adjusted_outcome(sample.y(), selected, &gamma);
    sharp_bandwidth(&xc, &ytilde, family, options, None)
}
