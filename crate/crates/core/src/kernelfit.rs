//! Kernels, localized regression designs and kernel-weighted least squares.
//!
//! Every estimator in the crate works on a [`Design`]: the observations with
//! positive kernel weight around the cutoff, the running variable centered at
//! the cutoff, and a fixed column order
//! `(1, T, X - c, T (X - c), Z_sel...)` for the local linear layout or
//! `(1, T (X - c), X - c, T (X - c)^2, (X - c)^2, Z_sel...)` for the kink layout.
//! Gram matrices are normalized by `1 / (n h)` where `n` is the full sample size.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{RdError, Result};
use crate::localpoly::Side;

/// Reciprocal condition number below which a weighted Gram matrix is rejected.
pub const RCOND_THRESHOLD: f64 = 1e-12;

/// Compactly supported second-order kernels on `[-1, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelFamily {
    Uniform,
    #[default]
    Triangular,
    Epanechnikov,
}

impl KernelFamily {
    /// Kernel value `K(u)`; zero outside `[-1, 1]`.
    pub fn eval(self, u: f64) -> f64 {
        let a = u.abs();
        // NaN falls through to zero as well.
        if !(a <= 1.0) {
            return 0.0;
        }
        match self {
            KernelFamily::Uniform => 0.5,
            KernelFamily::Triangular => 1.0 - a,
            KernelFamily::Epanechnikov => 0.75 * (1.0 - u * u),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            KernelFamily::Uniform => "uniform",
            KernelFamily::Triangular => "triangular",
            KernelFamily::Epanechnikov => "epanechnikov",
        }
    }
}

impl fmt::Display for KernelFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for KernelFamily {
    type Err = RdError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "uniform" | "rectangular" => Ok(KernelFamily::Uniform),
            "triangular" | "triangle" => Ok(KernelFamily::Triangular),
            "epanechnikov" | "epa" => Ok(KernelFamily::Epanechnikov),
            other => Err(RdError::invalid(format!("unknown kernel '{other}'"))),
        }
    }
}

/// A kernel family together with a bandwidth in units of the running variable.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub family: KernelFamily,
    bandwidth: f64,
}

impl KernelSpec {
    pub fn new(family: KernelFamily, bandwidth: f64) -> Result<Self> {
        if !(bandwidth > 0.0 && bandwidth.is_finite()) {
            return Err(RdError::invalid(format!(
                "bandwidth must be positive and finite, got {bandwidth}"
            )));
        }
        Ok(Self { family, bandwidth })
    }

    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    /// Weight `K(dx / h)` of an observation at distance `dx` from the cutoff.
    pub fn weight(&self, dx: f64) -> f64 {
        self.family.eval(dx / self.bandwidth)
    }
}

/// Evaluates `K(u)` for the spec's kernel family.
pub fn kernel_weight(spec: &KernelSpec, u: f64) -> f64 {
    spec.family.eval(u)
}

/// The raw dataset: running variable, outcome, covariates and optional take-up.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    x: Vec<f64>,
    y: Vec<f64>,
    z: DMatrix<f64>,
    w: Option<Vec<f64>>,
    cutoff: f64,
    covariate_names: Vec<String>,
}

impl Sample {
    /// Builds a sample; `z` must have one row per observation (it may have zero columns).
    pub fn new(x: Vec<f64>, y: Vec<f64>, z: DMatrix<f64>, cutoff: f64) -> Result<Self> {
        let n = x.len();
        if n == 0 {
            return Err(RdError::invalid("sample must contain at least one observation"));
        }
        if y.len() != n {
            return Err(RdError::invalid(format!(
                "outcome has {} values but running variable has {n}",
                y.len()
            )));
        }
        if z.nrows() != n {
            return Err(RdError::invalid(format!(
                "covariate matrix has {} rows, expected {n}",
                z.nrows()
            )));
        }
        if !cutoff.is_finite() {
            return Err(RdError::invalid("cutoff must be finite"));
        }
        if x.iter().chain(y.iter()).chain(z.iter()).any(|v| !v.is_finite()) {
            return Err(RdError::invalid("sample contains missing or non-finite values"));
        }
        let covariate_names = (0..z.ncols()).map(|j| format!("z{}", j + 1)).collect();
        Ok(Self {
            x,
            y,
            z,
            w: None,
            cutoff,
            covariate_names,
        })
    }

    /// Convenience constructor for a sample without covariates.
    pub fn without_covariates(x: Vec<f64>, y: Vec<f64>, cutoff: f64) -> Result<Self> {
        let n = x.len();
        Self::new(x, y, DMatrix::zeros(n, 0), cutoff)
    }

    /// Attaches treatment take-up indicators (fuzzy designs).
    pub fn with_takeup(mut self, w: Vec<f64>) -> Result<Self> {
        if w.len() != self.n() {
            return Err(RdError::invalid(format!(
                "take-up has {} values, expected {}",
                w.len(),
                self.n()
            )));
        }
        if w.iter().any(|&v| v != 0.0 && v != 1.0) {
            return Err(RdError::invalid("take-up indicators must be 0 or 1"));
        }
        self.w = Some(w);
        Ok(self)
    }

    pub fn with_covariate_names(mut self, names: Vec<String>) -> Result<Self> {
        if names.len() != self.p() {
            return Err(RdError::invalid(format!(
                "{} covariate names for {} covariates",
                names.len(),
                self.p()
            )));
        }
        self.covariate_names = names;
        Ok(self)
    }

    /// Same sample with a different outcome vector.
    pub fn with_outcome(&self, y: Vec<f64>) -> Result<Self> {
        if y.len() != self.n() {
            return Err(RdError::invalid("replacement outcome has the wrong length"));
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(RdError::invalid("replacement outcome contains non-finite values"));
        }
        let mut out = self.clone();
        out.y = y;
        Ok(out)
    }

    pub fn n(&self) -> usize {
        self.x.len()
    }

    pub fn p(&self) -> usize {
        self.z.ncols()
    }

    pub fn x(&self) -> &[f64] {
        &self.x
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn z(&self) -> &DMatrix<f64> {
        &self.z
    }

    pub fn w(&self) -> Option<&[f64]> {
        self.w.as_deref()
    }

    pub fn cutoff(&self) -> f64 {
        self.cutoff
    }

    pub fn covariate_names(&self) -> &[String] {
        &self.covariate_names
    }

    /// Running variable minus the cutoff.
    pub fn centered_x(&self) -> Vec<f64> {
        self.x.iter().map(|&x| x - self.cutoff).collect()
    }

    /// Treatment indicator `1{X >= cutoff}`.
    pub fn treatment(&self) -> Vec<f64> {
        self.x
            .iter()
            .map(|&x| if x >= self.cutoff { 1.0 } else { 0.0 })
            .collect()
    }

    /// `y - Z[:, cols] * gamma`.
    pub fn adjusted_outcome(&self, response: &[f64], cols: &[usize], gamma: &[f64]) -> Vec<f64> {
        debug_assert_eq!(cols.len(), gamma.len());
        let mut out = response.to_vec();
        for (&j, &g) in cols.iter().zip(gamma) {
            if g == 0.0 {
                continue;
            }
            for (o, &zv) in out.iter_mut().zip(self.z.column(j).iter()) {
                *o -= g * zv;
            }
        }
        out
    }
}

/// Column arrangement of the localized regression.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DesignLayout {
    /// `(1, T, X, T X)` — sharp and fuzzy designs.
    LocalLinear,
    /// `(1, T X, X, T X^2, X^2)` — regression kink design.
    KinkQuadratic,
}

impl DesignLayout {
    pub fn base_columns(self) -> usize {
        match self {
            DesignLayout::LocalLinear => 4,
            DesignLayout::KinkQuadratic => 5,
        }
    }
}

/// Identifies what a design column holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ColumnLabel {
    Intercept,
    Treatment,
    Running,
    TreatedRunning,
    TreatedRunningSq,
    RunningSq,
    /// Index into the sample's covariate matrix.
    Covariate(usize),
}

impl ColumnLabel {
    pub fn covariate(self) -> Option<usize> {
        match self {
            ColumnLabel::Covariate(j) => Some(j),
            _ => None,
        }
    }
}

/// Kernel-weighted regression design restricted to positive-weight observations.
#[derive(Debug, Clone)]
pub struct Design {
    g: DMatrix<f64>,
    weights: Vec<f64>,
    response: Vec<f64>,
    labels: Vec<ColumnLabel>,
    rows: Vec<usize>,
    treated: Vec<bool>,
    n_total: usize,
    bandwidth: f64,
    layout: DesignLayout,
}

impl Design {
    pub fn g(&self) -> &DMatrix<f64> {
        &self.g
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn response(&self) -> &[f64] {
        &self.response
    }

    pub fn labels(&self) -> &[ColumnLabel] {
        &self.labels
    }

    /// Sample indices of the retained rows.
    pub fn rows(&self) -> &[usize] {
        &self.rows
    }

    /// Whether each retained row is on the treated side.
    pub fn treated(&self) -> &[bool] {
        &self.treated
    }

    pub fn n_loc(&self) -> usize {
        self.rows.len()
    }

    pub fn n_total(&self) -> usize {
        self.n_total
    }

    pub fn ncols(&self) -> usize {
        self.g.ncols()
    }

    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    pub fn layout(&self) -> DesignLayout {
        self.layout
    }

    pub fn n_base(&self) -> usize {
        self.layout.base_columns()
    }

    /// The normalization `n h` of the objective and Gram matrix.
    pub fn scale(&self) -> f64 {
        self.n_total as f64 * self.bandwidth
    }

    /// `(design column, sample covariate index)` for every covariate column.
    pub fn covariate_columns(&self) -> Vec<(usize, usize)> {
        self.labels
            .iter()
            .enumerate()
            .filter_map(|(c, l)| l.covariate().map(|j| (c, j)))
            .collect()
    }

    /// Design with the same rows but a different response.
    pub fn with_response(&self, response: Vec<f64>) -> Result<Design> {
        if response.len() != self.n_loc() {
            return Err(RdError::invalid("response length does not match design rows"));
        }
        let mut d = self.clone();
        d.response = response;
        Ok(d)
    }

    /// Design keeping only the listed columns, in the given order.
    pub fn select_columns(&self, cols: &[usize]) -> Design {
        let g = self.g.select_columns(cols.iter());
        let labels = cols.iter().map(|&c| self.labels[c]).collect();
        Design {
            g,
            labels,
            ..self.clone()
        }
    }

    /// Design keeping only the listed local rows. The normalization `n h` is
    /// rescaled by the fraction of rows kept.
    pub fn select_rows(&self, local_rows: &[usize]) -> Design {
        let g = self.g.select_rows(local_rows.iter());
        let pick = |v: &[f64]| local_rows.iter().map(|&r| v[r]).collect::<Vec<_>>();
        let frac = local_rows.len() as f64 / self.n_loc().max(1) as f64;
        Design {
            g,
            weights: pick(&self.weights),
            response: pick(&self.response),
            labels: self.labels.clone(),
            rows: local_rows.iter().map(|&r| self.rows[r]).collect(),
            treated: local_rows.iter().map(|&r| self.treated[r]).collect(),
            n_total: ((self.n_total as f64) * frac).round().max(1.0) as usize,
            bandwidth: self.bandwidth,
            layout: self.layout,
        }
    }
}

/// Builds the local linear design with outcome `Y` and the given covariates.
pub fn build_design(sample: &Sample, kernel: &KernelSpec, covariates: &[usize]) -> Result<Design> {
    build_design_for(sample, kernel, covariates, DesignLayout::LocalLinear, sample.y())
}

/// Builds a design for an arbitrary layout and response vector (one value per sample row).
pub fn build_design_for(
    sample: &Sample,
    kernel: &KernelSpec,
    covariates: &[usize],
    layout: DesignLayout,
    response: &[f64],
) -> Result<Design> {
    if response.len() != sample.n() {
        return Err(RdError::invalid("response length does not match the sample"));
    }
    if let Some(&bad) = covariates.iter().find(|&&j| j >= sample.p()) {
        return Err(RdError::invalid(format!(
            "covariate index {bad} out of range (p = {})",
            sample.p()
        )));
    }
    let cutoff = sample.cutoff();
    let mut rows = Vec::new();
    let mut weights = Vec::new();
    for (i, &x) in sample.x().iter().enumerate() {
        let k = kernel.weight(x - cutoff);
        if k > 0.0 {
            rows.push(i);
            weights.push(k);
        }
    }
    let treated: Vec<bool> = rows.iter().map(|&i| sample.x()[i] >= cutoff).collect();
    if !treated.iter().any(|&t| !t) {
        return Err(RdError::EmptySide { side: Side::Left });
    }
    if !treated.iter().any(|&t| t) {
        return Err(RdError::EmptySide { side: Side::Right });
    }

    let nb = layout.base_columns();
    let ncols = nb + covariates.len();
    let m = rows.len();
    let mut g = DMatrix::zeros(m, ncols);
    for (r, &i) in rows.iter().enumerate() {
        let xc = sample.x()[i] - cutoff;
        let t = if treated[r] { 1.0 } else { 0.0 };
        match layout {
            DesignLayout::LocalLinear => {
                g[(r, 0)] = 1.0;
                g[(r, 1)] = t;
                g[(r, 2)] = xc;
                g[(r, 3)] = t * xc;
            }
            DesignLayout::KinkQuadratic => {
                g[(r, 0)] = 1.0;
                g[(r, 1)] = t * xc;
                g[(r, 2)] = xc;
                g[(r, 3)] = t * xc * xc;
                g[(r, 4)] = xc * xc;
            }
        }
        for (c, &j) in covariates.iter().enumerate() {
            g[(r, nb + c)] = sample.z()[(i, j)];
        }
    }
    let mut labels = match layout {
        DesignLayout::LocalLinear => vec![
            ColumnLabel::Intercept,
            ColumnLabel::Treatment,
            ColumnLabel::Running,
            ColumnLabel::TreatedRunning,
        ],
        DesignLayout::KinkQuadratic => vec![
            ColumnLabel::Intercept,
            ColumnLabel::TreatedRunning,
            ColumnLabel::Running,
            ColumnLabel::TreatedRunningSq,
            ColumnLabel::RunningSq,
        ],
    };
    labels.extend(covariates.iter().map(|&j| ColumnLabel::Covariate(j)));

    Ok(Design {
        g,
        response: rows.iter().map(|&i| response[i]).collect(),
        weights,
        labels,
        rows,
        treated,
        n_total: sample.n(),
        bandwidth: kernel.bandwidth(),
        layout,
    })
}

/// Result of a kernel-weighted least squares fit.
#[derive(Debug, Clone)]
pub struct WlsFit {
    pub coefficients: DVector<f64>,
    /// `((1 / (n h)) sum K_i G_i G_i')^{-1}`.
    pub gram_inverse: DMatrix<f64>,
    /// `Y_i - G_i' theta` for each design row.
    pub residuals: Vec<f64>,
    pub rcond: f64,
}

/// Normalized weighted Gram matrix `(1/(nh)) G' K G`.
pub(crate) fn weighted_gram(g: &DMatrix<f64>, weights: &[f64], scale: f64) -> DMatrix<f64> {
    let mut sg = g.clone();
    for (r, &k) in weights.iter().enumerate() {
        let s = k.sqrt();
        sg.row_mut(r).scale_mut(s);
    }
    let mut gram = sg.transpose() * &sg;
    gram /= scale;
    gram
}

/// Reciprocal 2-norm condition number of the unit-diagonal rescaling of a
/// symmetric PSD matrix. Invariant to column scaling of the underlying design.
pub(crate) fn equilibrated_rcond(gram: &DMatrix<f64>) -> (f64, DVector<f64>) {
    let k = gram.nrows();
    let mut d = DVector::zeros(k);
    for j in 0..k {
        let v = gram[(j, j)];
        if !(v > 0.0) {
            return (0.0, d);
        }
        d[j] = 1.0 / v.sqrt();
    }
    if k == 0 {
        return (1.0, d);
    }
    let mut eq = gram.clone();
    for i in 0..k {
        for j in 0..k {
            eq[(i, j)] *= d[i] * d[j];
        }
    }
    let eig = eq.symmetric_eigenvalues();
    let max = eig.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min = eig.iter().cloned().fold(f64::INFINITY, f64::min);
    let rcond = if max > 0.0 { (min / max).max(0.0) } else { 0.0 };
    (rcond, d)
}

/// Solves the kernel-weighted normal equations for the whole design.
pub fn weighted_ols(design: &Design) -> Result<WlsFit> {
    let scale = design.scale();
    let g = design.g();
    let k = g.ncols();
    let gram = weighted_gram(g, design.weights(), scale);
    let (rcond, d) = equilibrated_rcond(&gram);
    if !(rcond >= RCOND_THRESHOLD) {
        return Err(RdError::SingularDesign { rcond });
    }
    let mut rhs = DVector::zeros(k);
    for (r, (&kw, &y)) in design.weights().iter().zip(design.response()).enumerate() {
        let s = kw * y / scale;
        for c in 0..k {
            rhs[c] += g[(r, c)] * s;
        }
    }
    let mut eq = gram.clone();
    for i in 0..k {
        for j in 0..k {
            eq[(i, j)] *= d[i] * d[j];
        }
    }
    let chol = eq
        .cholesky()
        .ok_or(RdError::SingularDesign { rcond })?;
    let scaled_rhs = rhs.component_mul(&d);
    let coef = chol.solve(&scaled_rhs).component_mul(&d);
    let mut inv = chol.inverse();
    for i in 0..k {
        for j in 0..k {
            inv[(i, j)] *= d[i] * d[j];
        }
    }
    let fitted = g * &coef;
    let residuals = design
        .response()
        .iter()
        .zip(fitted.iter())
        .map(|(y, f)| y - f)
        .collect();
    Ok(WlsFit {
        coefficients: coef,
        gram_inverse: inv,
        residuals,
        rcond,
    })
}

/// Greedy selection of a linearly independent column subset: the first
/// `keep_first` columns are always retained, later columns are dropped when
/// their pivot in the equilibrated weighted Gram matrix falls below `tol`.
/// Returns design column indices in their original order.
pub fn independent_columns(design: &Design, keep_first: usize, tol: f64) -> Vec<usize> {
    let gram = weighted_gram(design.g(), design.weights(), design.scale());
    independent_gram_columns(&gram, keep_first, tol)
}

/// [`independent_columns`] on a precomputed Gram matrix.
pub(crate) fn independent_gram_columns(gram: &DMatrix<f64>, keep_first: usize, tol: f64) -> Vec<usize> {
    let k = gram.nrows();
    let mut kept: Vec<usize> = Vec::with_capacity(k);
    // Rows of the partial Cholesky factor for kept columns, over all columns.
    let mut factor: Vec<Vec<f64>> = Vec::with_capacity(k);
    for j in 0..k {
        let djj = gram[(j, j)];
        if !(djj > 0.0) {
            continue;
        }
        let sj = 1.0 / djj.sqrt();
        // Schur complement of column j given kept columns, on the equilibrated scale.
        let mut pivot = 1.0;
        let mut row = vec![0.0; kept.len()];
        for (a, &ca) in kept.iter().enumerate() {
            let sa = 1.0 / gram[(ca, ca)].sqrt();
            let mut v = gram[(ca, j)] * sa * sj;
            for b in 0..a {
                v -= factor[a][b] * row[b];
            }
            let l = v / factor[a][a];
            row[a] = l;
            pivot -= l * l;
        }
        if j < keep_first || pivot > tol {
            row.push(pivot.max(f64::MIN_POSITIVE).sqrt());
            factor.push(row);
            kept.push(j);
        }
    }
    kept
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn tri(h: f64) -> KernelSpec {
        KernelSpec::new(KernelFamily::Triangular, h).unwrap()
    }

    #[test]
    fn kernel_values() {
        let k = tri(1.0);
        assert_eq!(kernel_weight(&k, 0.0), 1.0);
        assert_eq!(kernel_weight(&k, 0.5), 0.5);
        let u = KernelSpec::new(KernelFamily::Uniform, 1.0).unwrap();
        assert_eq!(kernel_weight(&u, 1.5), 0.0);
        assert_eq!(kernel_weight(&u, 1.0), 0.5);
        assert_eq!(KernelFamily::Epanechnikov.eval(0.0), 0.75);
        assert_eq!(KernelFamily::Triangular.eval(f64::NAN), 0.0);
    }

    #[test]
    fn kernels_integrate_to_one_and_are_symmetric() {
        // Composite Simpson on [-1, 1].
        let m = 20_000;
        let step = 2.0 / m as f64;
        for fam in [
            KernelFamily::Uniform,
            KernelFamily::Triangular,
            KernelFamily::Epanechnikov,
        ] {
            let mut acc = 0.0;
            for i in 0..=m {
                let u = -1.0 + i as f64 * step;
                let c = if i == 0 || i == m {
                    1.0
                } else if i % 2 == 1 {
                    4.0
                } else {
                    2.0
                };
                // Uniform has jumps at the endpoints; evaluate just inside.
                let v = fam.eval(u.clamp(-1.0, 1.0));
                acc += c * v;
            }
            let integral = acc * step / 3.0;
            assert_abs_diff_eq!(integral, 1.0, epsilon = 1e-6);
            for u in [0.1, 0.37, 0.99, 1.3] {
                assert_eq!(fam.eval(u), fam.eval(-u));
                assert!(fam.eval(u) >= 0.0);
            }
        }
    }

    #[test]
    fn bandwidth_must_be_positive() {
        assert!(KernelSpec::new(KernelFamily::Triangular, 0.0).is_err());
        assert!(KernelSpec::new(KernelFamily::Triangular, -1.0).is_err());
        assert!(KernelSpec::new(KernelFamily::Triangular, f64::NAN).is_err());
    }

    #[test]
    fn two_point_design() {
        let s = Sample::without_covariates(vec![-0.5, 0.5], vec![1.0, 2.0], 0.0).unwrap();
        let d = build_design(&s, &tri(1.0), &[]).unwrap();
        assert_eq!(d.n_loc(), 2);
        assert_eq!(d.weights(), &[0.5, 0.5]);
        assert_eq!(d.g()[(0, 1)], 0.0);
        assert_eq!(d.g()[(1, 1)], 1.0);
        assert_eq!(d.g()[(0, 2)], -0.5);
        assert_eq!(d.g()[(1, 3)], 0.5);
    }

    #[test]
    fn empty_side_detected() {
        let s = Sample::without_covariates(vec![0.1, 0.2, 0.3], vec![1.0, 2.0, 3.0], 0.0).unwrap();
        assert_eq!(
            build_design(&s, &tri(1.0), &[]).unwrap_err(),
            RdError::EmptySide { side: Side::Left }
        );
        let s = Sample::without_covariates(vec![-0.1, -0.2], vec![1.0, 2.0], 0.0).unwrap();
        assert_eq!(
            build_design(&s, &tri(1.0), &[]).unwrap_err(),
            RdError::EmptySide { side: Side::Right }
        );
    }

    #[test]
    fn row_count_matches_direct_filter() {
        let x: Vec<f64> = (0..20).map(|i| -0.95 + 0.1 * i as f64 + 0.003 * (i % 3) as f64).collect();
        let y = vec![1.0; 20];
        let expected = x.iter().filter(|v| v.abs() <= 0.3).count();
        let s = Sample::without_covariates(x, y, 0.0).unwrap();
        let d = build_design(&s, &tri(0.3), &[]).unwrap();
        assert_eq!(d.n_loc(), expected);
        assert!(d.weights().iter().all(|&k| k > 0.0));
    }

    #[test]
    fn covariates_follow_base_columns_and_cutoff_is_centered() {
        let z = DMatrix::from_row_slice(4, 2, &[1.0, 10.0, 2.0, 20.0, 3.0, 30.0, 4.0, 40.0]);
        let s = Sample::new(vec![4.5, 4.8, 5.2, 5.4], vec![0.0; 4], z, 5.0).unwrap();
        let d = build_design(&s, &tri(1.0), &[1]).unwrap();
        assert_eq!(d.ncols(), 5);
        assert_eq!(d.labels()[4], ColumnLabel::Covariate(1));
        assert_abs_diff_eq!(d.g()[(0, 2)], -0.5, epsilon = 1e-12);
        assert_eq!(d.g()[(2, 1)], 1.0);
        assert_eq!(d.g()[(3, 4)], 40.0);
    }

    #[test]
    fn ols_recovers_exact_coefficients() {
        let n = 30;
        let x: Vec<f64> = (0..n).map(|i| -1.0 + 2.0 * (i as f64 + 0.5) / n as f64).collect();
        let zc: Vec<f64> = (0..n).map(|i| ((i * 7) % 11) as f64 / 11.0).collect();
        let theta = [0.3, -1.2, 0.8, 2.5, 0.7];
        let y: Vec<f64> = x
            .iter()
            .zip(&zc)
            .map(|(&x, &z)| {
                let t = if x >= 0.0 { 1.0 } else { 0.0 };
                theta[0] + theta[1] * t + theta[2] * x + theta[3] * t * x + theta[4] * z
            })
            .collect();
        let s = Sample::new(x, y, DMatrix::from_column_slice(n, 1, &zc), 0.0).unwrap();
        let d = build_design(&s, &KernelSpec::new(KernelFamily::Uniform, 2.0).unwrap(), &[0]).unwrap();
        let fit = weighted_ols(&d).unwrap();
        for (a, b) in fit.coefficients.iter().zip(theta) {
            assert_abs_diff_eq!(*a, b, epsilon = 1e-10);
        }
    }

    #[test]
    fn collinear_design_is_singular() {
        let n = 10;
        let x: Vec<f64> = (0..n).map(|i| -0.9 + 0.2 * i as f64).collect();
        let zc: Vec<f64> = (0..n).map(|i| (i as f64).sin()).collect();
        let mut z = DMatrix::zeros(n, 2);
        for i in 0..n {
            z[(i, 0)] = zc[i];
            z[(i, 1)] = zc[i];
        }
        let s = Sample::new(x, vec![1.0; n], z, 0.0).unwrap();
        let d = build_design(&s, &tri(1.0), &[0, 1]).unwrap();
        assert!(matches!(weighted_ols(&d), Err(RdError::SingularDesign { .. })));
        let kept = independent_columns(&d, 4, 1e-7);
        assert_eq!(kept, vec![0, 1, 2, 3, 4]);
        assert!(weighted_ols(&d.select_columns(&kept)).is_ok());
    }

    #[test]
    fn sample_validation() {
        assert!(Sample::without_covariates(vec![], vec![], 0.0).is_err());
        assert!(Sample::without_covariates(vec![1.0], vec![1.0, 2.0], 0.0).is_err());
        assert!(Sample::without_covariates(vec![f64::NAN], vec![1.0], 0.0).is_err());
        let s = Sample::without_covariates(vec![1.0, 2.0], vec![1.0, 2.0], 0.0).unwrap();
        assert!(s.clone().with_takeup(vec![0.0, 0.5]).is_err());
        assert!(s.with_takeup(vec![0.0, 1.0]).is_ok());
    }
}
