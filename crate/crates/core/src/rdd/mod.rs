//! Sharp, fuzzy and kink RD estimators with Lasso covariate selection and
//! robust bias-corrected inference.

mod fuzzy;
mod inference;
mod kink;
mod sharp;

use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{RdError, Result};
use crate::kernelfit::{build_design_for, DesignLayout, KernelFamily, KernelSpec, Sample};
use crate::lasso::{
    fit_local_lasso, plugin_choice, select_lambda, selection_set, LambdaRule, PenaltyConfig, ThresholdRule,
};
use crate::localpoly::{BandwidthOptions, BandwidthSelector, BandwidthPair, VarianceEstimator, DEFAULT_PILOT_CONSTANT};

pub use fuzzy::estimate_fuzzy;
pub use inference::{relative_efficiency, robust_ci, t_statistic, RobustInterval};
pub use kink::estimate_kink;
pub use sharp::estimate_sharp;

/// Denominator jumps at or below this magnitude are rejected.
pub const WEAK_JUMP: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// No covariates.
    Standard,
    /// All candidate covariates, collinear ones dropped.
    CovariateAdjusted,
    /// Lasso-selected covariates.
    CovariateSelection,
}

impl FromStr for Method {
    type Err = RdError;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "standard" => Ok(Method::Standard),
            "covariate_adjusted" | "adjusted" => Ok(Method::CovariateAdjusted),
            "covariate_selection" | "selection" => Ok(Method::CovariateSelection),
            other => Err(RdError::invalid(format!("unknown method '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DesignKind {
    Sharp,
    Fuzzy,
    Kink,
}

impl FromStr for DesignKind {
    type Err = RdError;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "sharp" => Ok(DesignKind::Sharp),
            "fuzzy" => Ok(DesignKind::Fuzzy),
            "kink" => Ok(DesignKind::Kink),
            other => Err(RdError::invalid(format!("unknown design '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BandwidthMode {
    /// MSE-optimal bandwidth of the covariate-free estimator.
    AutoWithoutCovariates,
    /// MSE-optimal bandwidth computed with the covariates in use.
    AutoWithCovariates,
    /// Select at the covariate-free bandwidth, then re-select with the chosen covariates.
    Adaptive,
    /// User-supplied `h`; `b` defaults to `h`.
    Fixed { h: f64, b: Option<f64> },
}

impl FromStr for BandwidthMode {
    type Err = RdError;
    fn from_str(s: &str) -> Result<Self> {
        let t = s.trim().to_ascii_lowercase();
        match t.as_str() {
            "auto-nocov" | "auto_without_covariates" => return Ok(BandwidthMode::AutoWithoutCovariates),
            "auto-cov" | "auto_with_covariates" => return Ok(BandwidthMode::AutoWithCovariates),
            "adaptive" => return Ok(BandwidthMode::Adaptive),
            _ => {}
        }
        let mut h = None;
        let mut b = None;
        for part in t.split(',') {
            let (key, val) = part
                .split_once('=')
                .ok_or_else(|| RdError::invalid(format!("cannot parse bandwidth '{s}'")))?;
            let v: f64 = val
                .trim()
                .parse()
                .map_err(|_| RdError::invalid(format!("bad bandwidth value '{val}'")))?;
            match key.trim() {
                "h" => h = Some(v),
                "b" => b = Some(v),
                other => return Err(RdError::invalid(format!("unknown bandwidth key '{other}'"))),
            }
        }
        let h = h.ok_or_else(|| RdError::invalid("fixed bandwidth needs h=<value>"))?;
        Ok(BandwidthMode::Fixed { h, b })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LambdaChoice {
    Plugin,
    CrossValidation,
    Fixed(f64),
}

impl LambdaChoice {
    fn rule(self) -> (LambdaRule, f64) {
        match self {
            LambdaChoice::Plugin => (LambdaRule::Plugin, 0.0),
            LambdaChoice::CrossValidation => (LambdaRule::CrossValidation, 0.0),
            LambdaChoice::Fixed(v) => (LambdaRule::Fixed, v),
        }
    }
}

impl FromStr for LambdaChoice {
    type Err = RdError;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "plugin" => Ok(LambdaChoice::Plugin),
            "cv" | "cross_validation" => Ok(LambdaChoice::CrossValidation),
            v => v
                .parse::<f64>()
                .ok()
                .filter(|x| *x >= 0.0 && x.is_finite())
                .map(LambdaChoice::Fixed)
                .ok_or_else(|| RdError::invalid(format!("lambda must be plugin, cv or a nonnegative number, got '{s}'"))),
        }
    }
}

/// An estimation request. Build with [`RddRequest::new`] and the setters.
#[derive(Debug, Clone)]
pub struct RddRequest<'a> {
    pub sample: &'a Sample,
    pub method: Method,
    pub design_kind: DesignKind,
    /// Known slope change of the policy rule (kink designs).
    pub kink_denominator: Option<f64>,
    pub kernel: KernelFamily,
    pub bandwidth_mode: BandwidthMode,
    pub level: f64,
    pub hb_restricted: bool,
    pub lambda: LambdaChoice,
    pub selection: ThresholdRule,
    /// Candidate covariates (sample column indices); `None` means all.
    pub covariates: Option<Vec<usize>>,
    pub variance: VarianceEstimator,
    pub pilot_constant: f64,
    pub selector: BandwidthSelector,
    /// See [`BandwidthOptions::regularization`].
    pub regularization: f64,
}

impl<'a> RddRequest<'a> {
    pub fn new(sample: &'a Sample) -> Self {
        Self {
            sample,
            method: Method::CovariateSelection,
            design_kind: DesignKind::Sharp,
            kink_denominator: None,
            kernel: KernelFamily::Triangular,
            bandwidth_mode: BandwidthMode::Adaptive,
            level: 0.95,
            hb_restricted: false,
            lambda: LambdaChoice::Plugin,
            selection: ThresholdRule::Support,
            covariates: None,
            variance: VarianceEstimator::default(),
            pilot_constant: DEFAULT_PILOT_CONSTANT,
            selector: BandwidthSelector::ThreeStep,
            regularization: 1.0,
        }
    }

    pub fn method(mut self, m: Method) -> Self {
        self.method = m;
        self
    }

    pub fn design(mut self, d: DesignKind) -> Self {
        self.design_kind = d;
        self
    }

    pub fn kink_denominator(mut self, b0: f64) -> Self {
        self.kink_denominator = Some(b0);
        self
    }

    pub fn kernel(mut self, k: KernelFamily) -> Self {
        self.kernel = k;
        self
    }

    pub fn bandwidth(mut self, mode: BandwidthMode) -> Self {
        self.bandwidth_mode = mode;
        self
    }

    pub fn level(mut self, level: f64) -> Self {
        self.level = level;
        self
    }

    pub fn hb_restricted(mut self, r: bool) -> Self {
        self.hb_restricted = r;
        self
    }

    pub fn lambda(mut self, l: LambdaChoice) -> Self {
        self.lambda = l;
        self
    }

    pub fn selection(mut self, rule: ThresholdRule) -> Self {
        self.selection = rule;
        self
    }

    pub fn covariates(mut self, cols: Vec<usize>) -> Self {
        self.covariates = Some(cols);
        self
    }

    pub fn variance(mut self, v: VarianceEstimator) -> Self {
        self.variance = v;
        self
    }

    pub fn regularization(mut self, scale: f64) -> Self {
        self.regularization = scale;
        self
    }

    pub fn selector(mut self, s: BandwidthSelector) -> Self {
        self.selector = s;
        self
    }

    pub(crate) fn candidates(&self) -> Vec<usize> {
        match &self.covariates {
            Some(c) => c.clone(),
            None => (0..self.sample.p()).collect(),
        }
    }

    pub(crate) fn bandwidth_options(&self) -> BandwidthOptions {
        BandwidthOptions {
            pilot_constant: self.pilot_constant,
            restricted: self.hb_restricted,
            variance: self.variance,
            regularization: self.regularization,
            selector: self.selector,
        }
    }

    pub(crate) fn fixed_pair(&self) -> Result<Option<BandwidthPair>> {
        match self.bandwidth_mode {
            BandwidthMode::Fixed { h, b } => {
                let b = if self.hb_restricted { h } else { b.unwrap_or(h) };
                let mut pair = BandwidthPair::new(h, b)?;
                pair.restricted = self.hb_restricted || h == b;
                Ok(Some(pair))
            }
            _ => Ok(None),
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.level > 0.0 && self.level < 1.0) {
            return Err(RdError::invalid(format!("confidence level must lie in (0, 1), got {}", self.level)));
        }
        if let Some(&bad) = self.candidates().iter().find(|&&j| j >= self.sample.p()) {
            return Err(RdError::invalid(format!("covariate index {bad} out of range")));
        }
        if !(self.regularization >= 0.0 && self.regularization.is_finite()) {
            return Err(RdError::invalid("regularization scale must be a nonnegative number"));
        }
        if !(self.pilot_constant > 0.0) {
            return Err(RdError::invalid("pilot constant must be positive"));
        }
        match self.design_kind {
            DesignKind::Fuzzy if self.sample.w().is_none() => {
                Err(RdError::invalid("fuzzy design requires take-up indicators"))
            }
            DesignKind::Kink => match self.kink_denominator {
                Some(b) if b != 0.0 && b.is_finite() => Ok(()),
                _ => Err(RdError::invalid("kink design requires a nonzero denominator")),
            },
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lower: f64,
    pub upper: f64,
}

impl Interval {
    pub fn length(&self) -> f64 {
        self.upper - self.lower
    }

    pub fn contains(&self, v: f64) -> bool {
        self.lower <= v && v <= self.upper
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SelectedCovariate {
    pub index: usize,
    pub name: String,
}

/// Take-up jump of a fuzzy design.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FirstStage {
    pub tau_hat: f64,
    pub tau_bc: f64,
    pub se_robust: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RddEstimate {
    pub tau_hat: f64,
    pub tau_bc: f64,
    pub se_robust: f64,
    pub se_conventional: f64,
    pub ci: Interval,
    pub p_value: f64,
    pub level: f64,
    /// Leading bias constant; the bias of `tau_hat` is `h^2 * bias`.
    pub bias: f64,
    /// `n h` times the variance of `tau_hat`.
    pub variance: f64,
    /// `n h` times the variance of `tau_bc`.
    pub variance_robust: f64,
    pub bandwidths: BandwidthPair,
    pub n: usize,
    pub n_minus: usize,
    pub n_plus: usize,
    pub selected: Vec<SelectedCovariate>,
    /// Coefficients on `selected`.
    pub gamma: Vec<f64>,
    /// Candidate covariates dropped as collinear.
    pub dropped: Vec<usize>,
    pub method_used: Method,
    pub design_kind: DesignKind,
    pub lambda: Option<f64>,
    pub first_stage: Option<FirstStage>,
    pub kink_denominator: Option<f64>,
}

impl RddEstimate {
    pub fn selected_indices(&self) -> Vec<usize> {
        self.selected.iter().map(|s| s.index).collect()
    }
}

/// Dispatches on the request's design kind.
pub fn estimate(request: &RddRequest<'_>) -> Result<RddEstimate> {
    match request.design_kind {
        DesignKind::Sharp => estimate_sharp(request),
        DesignKind::Fuzzy => estimate_fuzzy(request),
        DesignKind::Kink => estimate_kink(request),
    }
}

/// `#{c - h <= x < c}` and `#{c <= x <= c + h}`.
pub(crate) fn effective_counts(sample: &Sample, h: f64) -> (usize, usize) {
    let c = sample.cutoff();
    let mut minus = 0;
    let mut plus = 0;
    for &x in sample.x() {
        let d = x - c;
        if d < 0.0 && d >= -h {
            minus += 1;
        } else if d >= 0.0 && d <= h {
            plus += 1;
        }
    }
    (minus, plus)
}

pub(crate) fn labels(sample: &Sample, idx: &[usize]) -> Vec<SelectedCovariate> {
    idx.iter()
        .map(|&j| SelectedCovariate {
            index: j,
            name: sample.covariate_names()[j].clone(),
        })
        .collect()
}

/// Result of the Lasso selection step.
#[derive(Debug, Clone)]
pub(crate) struct Selection {
    pub selected: Vec<usize>,
    pub lambda: Option<f64>,
}

/// Runs the partially penalized Lasso for `response` at bandwidth `h` and
/// applies the selection rule. `lambda_override` fixes the plug-in level
/// (loadings are still computed for this response). Degenerate pilot
/// residuals mean nothing can be learned from covariates: empty selection.
pub(crate) fn lasso_select(
    req: &RddRequest<'_>,
    response: &[f64],
    layout: DesignLayout,
    h: f64,
    candidates: &[usize],
    lambda_override: Option<f64>,
) -> Result<Selection> {
    if candidates.is_empty() {
        return Ok(Selection {
            selected: Vec::new(),
            lambda: None,
        });
    }
    let kernel = KernelSpec::new(req.kernel, h)?;
    let design = build_design_for(req.sample, &kernel, candidates, layout, response)?;
    let (rule, fixed) = req.lambda.rule();
    let template = PenaltyConfig::partially_penalized(&design, fixed).with_rule(rule);
    let choice = match (lambda_override, rule) {
        (Some(l), LambdaRule::Plugin) => plugin_choice(&design, &template, Some(l)),
        (Some(l), _) => select_lambda(&design, &template.clone().with_lambda(l).with_rule(LambdaRule::Fixed)),
        (None, _) => select_lambda(&design, &template),
    };
    let choice = match choice {
        Ok(c) => c,
        Err(RdError::DegenerateResiduals) => {
            return Ok(Selection {
                selected: Vec::new(),
                lambda: None,
            })
        }
        Err(e) => return Err(e),
    };
    let fit = fit_local_lasso(&design, &choice.apply(&template))?.ensure_converged()?;
    let mut selected = selection_set(&fit, req.selection, req.sample.n(), choice.lambda)?;
    selected.sort_unstable();
    Ok(Selection {
        selected,
        lambda: Some(choice.lambda),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_modes() {
        assert_eq!("adaptive".parse::<BandwidthMode>().unwrap(), BandwidthMode::Adaptive);
        assert_eq!(
            "h=0.2,b=0.3".parse::<BandwidthMode>().unwrap(),
            BandwidthMode::Fixed { h: 0.2, b: Some(0.3) }
        );
        assert_eq!("h=0.2".parse::<BandwidthMode>().unwrap(), BandwidthMode::Fixed { h: 0.2, b: None });
        assert!("b=0.2".parse::<BandwidthMode>().is_err());
        assert_eq!("cv".parse::<LambdaChoice>().unwrap(), LambdaChoice::CrossValidation);
        assert_eq!("0.5".parse::<LambdaChoice>().unwrap(), LambdaChoice::Fixed(0.5));
        assert!("-1".parse::<LambdaChoice>().is_err());
        assert_eq!("covariate-selection".parse::<Method>().unwrap(), Method::CovariateSelection);
    }

    #[test]
    fn counts_use_closed_intervals() {
        let s = Sample::without_covariates(vec![-0.5, -0.2, 0.0, 0.2, 0.5, 0.6], vec![0.0; 6], 0.0).unwrap();
        assert_eq!(effective_counts(&s, 0.5), (2, 3));
    }

    #[test]
    fn request_validation() {
        let s = Sample::without_covariates(vec![-0.5, 0.5], vec![0.0; 2], 0.0).unwrap();
        assert!(RddRequest::new(&s).level(1.0).validate().is_err());
        assert!(RddRequest::new(&s).design(DesignKind::Fuzzy).validate().is_err());
        assert!(RddRequest::new(&s).design(DesignKind::Kink).validate().is_err());
        assert!(RddRequest::new(&s).design(DesignKind::Kink).kink_denominator(0.0).validate().is_err());
        assert!(RddRequest::new(&s).covariates(vec![0]).validate().is_err());
    }
}
