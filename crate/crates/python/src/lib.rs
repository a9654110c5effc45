//! Python bindings: samples, the RD estimators, the local Lasso and the
//! simulation designs.

use std::str::FromStr;

use nalgebra::DMatrix;
use pyo3::create_exception;
use pyo3::exceptions::{PyException, PyValueError};
use pyo3::prelude::*;
use serde::Serialize;

use rdlasso::cli::{parse_selection, parse_selector};
use rdlasso::error::RdError;
use rdlasso::kernelfit::{build_design, KernelFamily, KernelSpec, Sample};
use rdlasso::lasso::{self, LambdaRule, LassoFit, PenaltyConfig};
use rdlasso::rdd::{self, BandwidthMode, DesignKind, LambdaChoice, Method, RddEstimate, RddRequest};
use rdlasso::sim::{self, emit_tables, table_methods, Dgp, DgpSpec, McConfig};

create_exception!(rdlasso_py, RdlassoError, PyException, "Estimation failure raised by the Rust engine.");

fn engine(e: RdError) -> PyErr {
    RdlassoError::new_err(e.to_string())
}

fn parsed<T: FromStr>(what: &str, s: &str) -> PyResult<T>
where
    T::Err: std::fmt::Display,
{
    s.parse::<T>().map_err(|e| PyValueError::new_err(format!("{what}: {e}")))
}

fn to_python<'py, T: Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyValueError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

/// Observations around a cutoff: running variable, outcome, optional
/// covariate rows and take-up indicator.
#[pyclass(name = "Sample", module = "rdlasso_py", frozen)]
struct PySample {
    inner: Sample,
}

#[pymethods]
impl PySample {
    #[new]
    #[pyo3(signature = (x, y, z=None, cutoff=0.0, takeup=None, covariate_names=None))]
    fn new(
        x: Vec<f64>,
        y: Vec<f64>,
        z: Option<Vec<Vec<f64>>>,
        cutoff: f64,
        takeup: Option<Vec<f64>>,
        covariate_names: Option<Vec<String>>,
    ) -> PyResult<Self> {
        let n = x.len();
        let rows = z.unwrap_or_else(|| vec![Vec::new(); n]);
        if rows.len() != n {
            return Err(PyValueError::new_err(format!("z has {} rows, x has {n}", rows.len())));
        }
        let p = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != p) {
            return Err(PyValueError::new_err("z rows must all have the same length"));
        }
        let flat: Vec<f64> = rows.into_iter().flatten().collect();
        let mut s = Sample::new(x, y, DMatrix::from_row_slice(n, p, &flat), cutoff).map_err(engine)?;
        if let Some(names) = covariate_names {
            s = s.with_covariate_names(names).map_err(engine)?;
        }
        if let Some(w) = takeup {
            s = s.with_takeup(w).map_err(engine)?;
        }
        Ok(Self { inner: s })
    }

    #[getter]
    fn n(&self) -> usize {
        self.inner.n()
    }

    #[getter]
    fn p(&self) -> usize {
        self.inner.p()
    }

    #[getter]
    fn cutoff(&self) -> f64 {
        self.inner.cutoff()
    }

    #[getter]
    fn x(&self) -> Vec<f64> {
        self.inner.x().to_vec()
    }

    #[getter]
    fn y(&self) -> Vec<f64> {
        self.inner.y().to_vec()
    }

    /// Covariates as a list of rows.
    #[getter]
    fn z(&self) -> Vec<Vec<f64>> {
        let z = self.inner.z();
        (0..z.nrows()).map(|i| z.row(i).iter().copied().collect()).collect()
    }

    #[getter]
    fn takeup(&self) -> Option<Vec<f64>> {
        self.inner.w().map(<[f64]>::to_vec)
    }

    #[getter]
    fn covariate_names(&self) -> Vec<String> {
        self.inner.covariate_names().to_vec()
    }

    fn __len__(&self) -> usize {
        self.inner.n()
    }

    fn __repr__(&self) -> String {
        format!("Sample(n={}, p={}, cutoff={})", self.inner.n(), self.inner.p(), self.inner.cutoff())
    }
}

/// Result of an RD estimation.
#[pyclass(name = "Estimate", module = "rdlasso_py", frozen)]
struct PyEstimate {
    inner: RddEstimate,
}

#[pymethods]
impl PyEstimate {
    #[getter]
    fn tau_hat(&self) -> f64 {
        self.inner.tau_hat
    }

    #[getter]
    fn tau_bc(&self) -> f64 {
        self.inner.tau_bc
    }

    #[getter]
    fn se_robust(&self) -> f64 {
        self.inner.se_robust
    }

    #[getter]
    fn se_conventional(&self) -> f64 {
        self.inner.se_conventional
    }

    #[getter]
    fn ci(&self) -> (f64, f64) {
        (self.inner.ci.lower, self.inner.ci.upper)
    }

    #[getter]
    fn p_value(&self) -> f64 {
        self.inner.p_value
    }

    #[getter]
    fn level(&self) -> f64 {
        self.inner.level
    }

    #[getter]
    fn h(&self) -> f64 {
        self.inner.bandwidths.h
    }

    #[getter]
    fn b(&self) -> f64 {
        self.inner.bandwidths.b
    }

    #[getter]
    fn n(&self) -> usize {
        self.inner.n
    }

    #[getter]
    fn n_minus(&self) -> usize {
        self.inner.n_minus
    }

    #[getter]
    fn n_plus(&self) -> usize {
        self.inner.n_plus
    }

    /// Names of the covariates used.
    #[getter]
    fn selected(&self) -> Vec<String> {
        self.inner.selected.iter().map(|c| c.name.clone()).collect()
    }

    #[getter]
    fn selected_indices(&self) -> Vec<usize> {
        self.inner.selected_indices()
    }

    #[getter]
    fn gamma(&self) -> Vec<f64> {
        self.inner.gamma.clone()
    }

    #[getter]
    fn lambda_(&self) -> Option<f64> {
        self.inner.lambda
    }

    #[getter]
    fn method_used(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        Ok(to_python(py, &self.inner.method_used)?.unbind())
    }

    /// `(tau_hat, tau_bc, se_robust)` of the take-up jump in fuzzy designs.
    #[getter]
    fn first_stage(&self) -> Option<(f64, f64, f64)> {
        self.inner.first_stage.map(|f| (f.tau_hat, f.tau_bc, f.se_robust))
    }

    /// Ratio of this estimate's variance constant to `other`'s.
    fn relative_efficiency(&self, other: &PyEstimate) -> f64 {
        rdd::relative_efficiency(&self.inner, &other.inner)
    }

    fn to_dict<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_python(py, &self.inner)
    }

    fn to_json(&self) -> PyResult<String> {
        serde_json::to_string_pretty(&self.inner).map_err(|e| PyValueError::new_err(e.to_string()))
    }

    fn __repr__(&self) -> String {
        let e = &self.inner;
        format!(
            "Estimate(tau_bc={:.6}, ci=({:.6}, {:.6}), h={:.6}, selected={:?})",
            e.tau_bc,
            e.ci.lower,
            e.ci.upper,
            e.bandwidths.h,
            self.selected()
        )
    }
}

/// Sharp, fuzzy or kink RD estimate with Lasso covariate selection by default.
#[pyfunction]
#[pyo3(signature = (
    sample, method="selection", design="sharp", bandwidth="adaptive", level=0.95, kernel="triangular",
    lambda_="plugin", selection="support", selector="three-step", hb_restricted=false, covariates=None,
    kink_denominator=None,
))]
#[allow(clippy::too_many_arguments)]
fn estimate(
    py: Python<'_>,
    sample: &PySample,
    method: &str,
    design: &str,
    bandwidth: &str,
    level: f64,
    kernel: &str,
    lambda_: &str,
    selection: &str,
    selector: &str,
    hb_restricted: bool,
    covariates: Option<Vec<usize>>,
    kink_denominator: Option<f64>,
) -> PyResult<PyEstimate> {
    let mut req = RddRequest::new(&sample.inner)
        .method(parsed::<Method>("method", method)?)
        .design(parsed::<DesignKind>("design", design)?)
        .bandwidth(parsed::<BandwidthMode>("bandwidth", bandwidth)?)
        .level(level)
        .kernel(parsed::<KernelFamily>("kernel", kernel)?)
        .lambda(parsed::<LambdaChoice>("lambda_", lambda_)?)
        .selection(parse_selection(selection).map_err(PyValueError::new_err)?)
        .selector(parse_selector(selector).map_err(PyValueError::new_err)?)
        .hb_restricted(hb_restricted);
    if let Some(cols) = covariates {
        req = req.covariates(cols);
    }
    if let Some(b0) = kink_denominator {
        req = req.kink_denominator(b0);
    }
    let inner = py.detach(|| rdd::estimate(&req)).map_err(engine)?;
    Ok(PyEstimate { inner })
}

/// Fitted kernel-weighted Lasso with `(1, T, X, T X)` unpenalized.
#[pyclass(name = "LassoFit", module = "rdlasso_py", frozen)]
struct PyLassoFit {
    inner: LassoFit,
    n: usize,
}

#[pymethods]
impl PyLassoFit {
    #[getter]
    fn theta(&self) -> Vec<f64> {
        self.inner.theta.clone()
    }

    #[getter]
    fn support(&self) -> Vec<usize> {
        self.inner.support.clone()
    }

    /// `(sample covariate index, coefficient)` pairs.
    #[getter]
    fn gamma(&self) -> Vec<(usize, f64)> {
        self.inner.gamma()
    }

    #[getter]
    fn lambda_used(&self) -> f64 {
        self.inner.lambda_used
    }

    #[getter]
    fn objective(&self) -> f64 {
        self.inner.objective
    }

    #[getter]
    fn iterations(&self) -> usize {
        self.inner.iterations
    }

    #[getter]
    fn converged(&self) -> bool {
        self.inner.converged
    }

    /// Covariates retained by a selection rule (`support` or `threshold`).
    #[pyo3(signature = (rule="support"))]
    fn selected(&self, rule: &str) -> PyResult<Vec<usize>> {
        let rule = parse_selection(rule).map_err(PyValueError::new_err)?;
        lasso::selection_set(&self.inner, rule, self.n, self.inner.lambda_used).map_err(engine)
    }

    fn __repr__(&self) -> String {
        format!(
            "LassoFit(lambda={:.6}, support={:?}, converged={})",
            self.inner.lambda_used, self.inner.support, self.inner.converged
        )
    }
}

/// Local Lasso at bandwidth `h`; `lambda_` is `plugin`, `cv` or a number.
#[pyfunction]
#[pyo3(signature = (sample, h, lambda_="plugin", kernel="triangular", covariates=None, standardize=true))]
fn lasso_fit(
    py: Python<'_>,
    sample: &PySample,
    h: f64,
    lambda_: &str,
    kernel: &str,
    covariates: Option<Vec<usize>>,
    standardize: bool,
) -> PyResult<PyLassoFit> {
    let family = parsed::<KernelFamily>("kernel", kernel)?;
    let (rule, value) = match parsed::<LambdaChoice>("lambda_", lambda_)? {
        LambdaChoice::Plugin => (LambdaRule::Plugin, 0.0),
        LambdaChoice::CrossValidation => (LambdaRule::CrossValidation, 0.0),
        LambdaChoice::Fixed(v) => (LambdaRule::Fixed, v),
    };
    let s = &sample.inner;
    let cols = covariates.unwrap_or_else(|| (0..s.p()).collect());
    let inner = py
        .detach(|| {
            let design = build_design(s, &KernelSpec::new(family, h)?, &cols)?;
            let template = PenaltyConfig::partially_penalized(&design, value)
                .with_rule(rule)
                .with_standardize(standardize);
            let penalty = lasso::select_lambda(&design, &template)?.apply(&template);
            lasso::fit_local_lasso(&design, &penalty)
        })
        .map_err(engine)?;
    Ok(PyLassoFit { inner, n: s.n() })
}

/// `lambda` before loadings under the plug-in rule.
#[pyfunction]
#[pyo3(signature = (p, n_loc, c=1.1, alpha=0.1))]
fn plugin_lambda(p: usize, n_loc: usize, c: f64, alpha: f64) -> f64 {
    lasso::plugin_lambda_core(p, n_loc, c, alpha)
}

#[pyfunction]
fn rho_n(n: usize) -> f64 {
    lasso::rho_n(n)
}

fn dgp_spec(dgp: &str, n: usize, p: usize, seed: u64) -> PyResult<DgpSpec> {
    DgpSpec::new(parsed::<Dgp>("dgp", dgp)?, n, p, seed).map_err(engine)
}

/// One replication of a simulation design (`dgp1`, `dgp2` or `dgp3`).
#[pyfunction]
#[pyo3(signature = (dgp, n=500, p=5, seed=1, replication=0))]
fn draw_sample(dgp: &str, n: usize, p: usize, seed: u64, replication: u64) -> PyResult<PySample> {
    let spec = dgp_spec(dgp, n, p, seed)?;
    Ok(PySample {
        inner: sim::draw_sample(&spec, replication),
    })
}

/// Jump of the conditional mean at the cutoff.
#[pyfunction]
fn true_tau(dgp: &str) -> PyResult<f64> {
    let d = parsed::<Dgp>("dgp", dgp)?;
    Ok(sim::true_tau(&DgpSpec { dgp: d, n: 500, p: 1, seed: 0 }))
}

/// Monte Carlo summaries of the four table estimators, one per entry of `p`.
/// With `csv=True` the tables are returned as CSV text instead.
#[pyfunction]
#[pyo3(signature = (
    dgp, p, n=500, reps=1000, seed=1, level=0.95, lambda_="plugin", selection="support",
    selector="three-step", threads=None, csv=false,
))]
#[allow(clippy::too_many_arguments)]
fn simulate<'py>(
    py: Python<'py>,
    dgp: &str,
    p: Vec<usize>,
    n: usize,
    reps: usize,
    seed: u64,
    level: f64,
    lambda_: &str,
    selection: &str,
    selector: &str,
    threads: Option<usize>,
    csv: bool,
) -> PyResult<Bound<'py, PyAny>> {
    let cfg = McConfig {
        level,
        lambda: parsed::<LambdaChoice>("lambda_", lambda_)?,
        selection: parse_selection(selection).map_err(PyValueError::new_err)?,
        selector: parse_selector(selector).map_err(PyValueError::new_err)?,
        threads,
        ..McConfig::default()
    };
    let specs = p.iter().map(|&k| dgp_spec(dgp, n, k, seed)).collect::<PyResult<Vec<_>>>()?;
    let methods = table_methods();
    let summaries = py
        .detach(|| specs.iter().map(|s| sim::run_monte_carlo(s, reps, &methods, &cfg)).collect::<Result<Vec<_>, _>>())
        .map_err(engine)?;
    if csv {
        let mut out = Vec::new();
        emit_tables(&summaries, &mut out).map_err(|e| RdlassoError::new_err(e.to_string()))?;
        let text = String::from_utf8(out).map_err(|e| PyValueError::new_err(e.to_string()))?;
        return Ok(text.into_pyobject(py)?.into_any());
    }
    to_python(py, &summaries)
}

#[pymodule]
fn rdlasso_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PySample>()?;
    m.add_class::<PyEstimate>()?;
    m.add_class::<PyLassoFit>()?;
    m.add_function(wrap_pyfunction!(estimate, m)?)?;
    m.add_function(wrap_pyfunction!(lasso_fit, m)?)?;
    m.add_function(wrap_pyfunction!(plugin_lambda, m)?)?;
    m.add_function(wrap_pyfunction!(rho_n, m)?)?;
    m.add_function(wrap_pyfunction!(draw_sample, m)?)?;
    m.add_function(wrap_pyfunction!(true_tau, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add("RdlassoError", m.py().get_type::<RdlassoError>())?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
