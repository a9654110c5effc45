use super::{
    effective_counts, labels, lasso_select, robust_ci, BandwidthMode, DesignKind, Method, RddEstimate, RddRequest,
};
use crate::error::{RdError, Result};
use crate::kernelfit::{
    build_design_for, independent_columns, weighted_ols, DesignLayout, KernelFamily, KernelSpec, Sample,
};
use crate::localpoly::{
    deviations, mse_optimal_bandwidth_with, sharp_core, BandwidthPair, COLLINEAR_TOL,
};

/// Sharp RD estimate for the request's method and bandwidth mode.
pub fn estimate_sharp(req: &RddRequest<'_>) -> Result<RddEstimate> {
    req.validate()?;
    if req.design_kind != DesignKind::Sharp {
        return Err(RdError::invalid("estimate_sharp called with a non-sharp request"));
    }
    match req.method {
        Method::Standard => standard(req),
        Method::CovariateAdjusted => adjusted(req),
        Method::CovariateSelection => selection(req),
    }
}

pub(crate) fn covariate_free_pair(req: &RddRequest<'_>, _xc: &[f64]) -> Result<BandwidthPair> {
    match req.fixed_pair()? {
        Some(p) => Ok(p),
        None => mse_optimal_bandwidth_with(req.sample, &[], None, req.kernel, &req.bandwidth_options()),
    }
}

/// Bandwidth once the covariate set is known.
pub(crate) fn pair_with(
    req: &RddRequest<'_>,
    covs: &[usize],
    covariate_free: impl FnOnce() -> Result<BandwidthPair>,
) -> Result<BandwidthPair> {
    match req.bandwidth_mode {
        BandwidthMode::Fixed { .. } => Ok(req.fixed_pair()?.expect("fixed mode")),
        BandwidthMode::AutoWithoutCovariates => covariate_free(),
        BandwidthMode::AutoWithCovariates | BandwidthMode::Adaptive => {
            mse_optimal_bandwidth_with(req.sample, covs, None, req.kernel, &req.bandwidth_options())
        }
    }
}

fn standard(req: &RddRequest<'_>) -> Result<RddEstimate> {
    let xc = req.sample.centered_x();
    let bw = covariate_free_pair(req, &xc)?;
    finish(req, &xc, &[], bw, Method::Standard, None)
}

fn adjusted(req: &RddRequest<'_>) -> Result<RddEstimate> {
    let covs = req.candidates();
    if covs.is_empty() {
        return standard(req);
    }
    let xc = req.sample.centered_x();
    let bw = pair_with(req, &covs, || covariate_free_pair(req, &xc))?;
    finish(req, &xc, &covs, bw, Method::CovariateAdjusted, None)
}

fn selection(req: &RddRequest<'_>) -> Result<RddEstimate> {
    let covs = req.candidates();
    if covs.is_empty() {
        return standard(req);
    }
    let xc = req.sample.centered_x();
    let pilot = covariate_free_pair(req, &xc)?;
    let sel = lasso_select(req, req.sample.y(), DesignLayout::LocalLinear, pilot.h, &covs, None)?;
    if sel.selected.is_empty() {
        return standard(req);
    }
    let bw = pair_with(req, &sel.selected, || Ok(pilot))?;
    finish(req, &xc, &sel.selected, bw, Method::CovariateSelection, sel.lambda)
}

/// Covariate coefficients from the weighted least-squares fit at `h`, after
/// dropping collinear covariates. Returns `(kept, gamma, dropped)`.
pub(crate) fn adjustment(
    sample: &Sample,
    family: KernelFamily,
    h: f64,
    covs: &[usize],
    response: &[f64],
    layout: DesignLayout,
) -> Result<(Vec<usize>, Vec<f64>, Vec<usize>)> {
    if covs.is_empty() {
        return Ok((Vec::new(), Vec::new(), Vec::new()));
    }
    let design = build_design_for(sample, &KernelSpec::new(family, h)?, covs, layout, response)?;
    let nb = design.n_base();
    let keep = independent_columns(&design, nb, COLLINEAR_TOL);
    let fit = weighted_ols(&design.select_columns(&keep))?;
    let kept: Vec<usize> = keep[nb..].iter().map(|&c| covs[c - nb]).collect();
    let gamma = fit.coefficients.iter().skip(nb).copied().collect();
    let dropped = covs.iter().copied().filter(|j| !kept.contains(j)).collect();
    Ok((kept, gamma, dropped))
}

fn finish(
    req: &RddRequest<'_>,
    xc: &[f64],
    covs: &[usize],
    bw: BandwidthPair,
    method: Method,
    lambda: Option<f64>,
) -> Result<RddEstimate> {
    let sample = req.sample;
    let (kept, gamma, dropped) = adjustment(sample, req.kernel, bw.h, covs, sample.y(), DesignLayout::LocalLinear)?;
    let ytilde = sample.adjusted_outcome(sample.y(), &kept, &gamma);
    let dev = deviations(xc, &ytilde, req.variance, None, req.kernel, bw.h.max(bw.b))?;
    let core = sharp_core(xc, &ytilde, &dev, req.kernel, bw)?;
    let nh = sample.n() as f64 * bw.h;
    let variance_robust = nh * core.se_robust * core.se_robust;
    let ri = robust_ci(core.tau, bw.h * bw.h * core.bias, variance_robust, nh, req.level)?;
    let (n_minus, n_plus) = effective_counts(sample, bw.h);
    Ok(RddEstimate {
        tau_hat: core.tau,
        tau_bc: ri.center,
        se_robust: ri.se,
        se_conventional: core.se_conventional,
        ci: ri.ci,
        p_value: ri.p_value,
        level: req.level,
        bias: core.bias,
        variance: nh * core.se_conventional * core.se_conventional,
        variance_robust,
        bandwidths: bw,
        n: sample.n(),
        n_minus,
        n_plus,
        selected: labels(sample, &kept),
        gamma,
        dropped,
        method_used: method,
        design_kind: DesignKind::Sharp,
        lambda,
        first_stage: None,
        kink_denominator: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rdd::estimate;
    use approx::assert_abs_diff_eq;
    use nalgebra::DMatrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn noisy(n: usize, p: usize, seed: u64, gamma: &[f64]) -> Sample {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut z = DMatrix::zeros(n, p);
        for v in z.iter_mut() {
            *v = rng.sample::<f64, _>(StandardNormal);
        }
        let y = (0..n)
            .map(|i| {
                let t = if x[i] >= 0.0 { 0.3 } else { 0.0 };
                let lin: f64 = gamma.iter().enumerate().map(|(j, g)| g * z[(i, j)]).sum();
                t + 0.5 * x[i] + x[i] * x[i] + lin + 0.2 * rng.sample::<f64, _>(StandardNormal)
            })
            .collect();
        Sample::new(x, y, z, 0.0).unwrap()
    }

    #[test]
    fn exact_piecewise_linear() {
        let x: Vec<f64> = (0..200).map(|i| -1.0 + (i as f64 + 0.5) / 100.0).collect();
        let y: Vec<f64> = x.iter().map(|&x| if x >= 0.0 { 0.5 } else { 0.0 } + x).collect();
        let s = Sample::without_covariates(x, y, 0.0).unwrap();
        let r = RddRequest::new(&s).method(Method::Standard);
        let e = estimate(&r).unwrap();
        assert_abs_diff_eq!(e.tau_hat, 0.5, epsilon = 1e-8);
        let e = estimate(&r.clone().bandwidth(BandwidthMode::Fixed { h: 0.3, b: Some(0.5) })).unwrap();
        assert_abs_diff_eq!(e.tau_hat, 0.5, epsilon = 1e-8);
    }

    #[test]
    fn no_covariates_selection_equals_standard() {
        let s = noisy(300, 0, 1, &[]);
        let a = estimate(&RddRequest::new(&s).method(Method::Standard)).unwrap();
        let b = estimate(&RddRequest::new(&s).method(Method::CovariateSelection)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn ci_consistent_with_se() {
        let s = noisy(400, 3, 2, &[0.5, 0.0, 0.0]);
        for m in [Method::Standard, Method::CovariateAdjusted, Method::CovariateSelection] {
            let e = estimate(&RddRequest::new(&s).method(m).level(0.9)).unwrap();
            let z = crate::stats::two_sided_z(0.9);
            assert_abs_diff_eq!(e.ci.lower, e.tau_bc - z * e.se_robust, epsilon = 1e-10);
            assert_abs_diff_eq!(e.ci.upper, e.tau_bc + z * e.se_robust, epsilon = 1e-10);
            assert!(e.variance >= 0.0 && e.variance_robust >= 0.0);
        }
    }

    #[test]
    fn strong_covariate_is_selected() {
        let s = noisy(600, 4, 3, &[1.0, 0.0, 0.0, 0.0]);
        let e = estimate(&RddRequest::new(&s)).unwrap();
        assert_eq!(e.method_used, Method::CovariateSelection);
        assert!(e.selected_indices().contains(&0));
        let g0 = e.gamma[e.selected_indices().iter().position(|&j| j == 0).unwrap()];
        assert!((g0 - 1.0).abs() < 0.1);
    }

    #[test]
    fn outcome_shift_leaves_tau() {
        let s = noisy(400, 3, 4, &[0.4, 0.0, 0.2]);
        let t = s.with_outcome(s.y().iter().map(|y| y + 3.0).collect()).unwrap();
        for m in [Method::Standard, Method::CovariateAdjusted, Method::CovariateSelection] {
            let mode = BandwidthMode::Fixed { h: 0.5, b: Some(0.7) };
            let a = estimate(&RddRequest::new(&s).method(m).bandwidth(mode)).unwrap();
            let b = estimate(&RddRequest::new(&t).method(m).bandwidth(mode)).unwrap();
            assert_abs_diff_eq!(a.tau_hat, b.tau_hat, epsilon = 1e-9);
        }
    }

    #[test]
    fn duplicate_covariate_is_dropped() {
        let s = noisy(300, 2, 5, &[0.5, 0.0]);
        let mut z = s.z().clone();
        let c0 = z.column(0).clone_owned();
        z.set_column(1, &c0);
        let s = Sample::new(s.x().to_vec(), s.y().to_vec(), z, 0.0).unwrap();
        let e = estimate(&RddRequest::new(&s).method(Method::CovariateAdjusted)).unwrap();
        assert_eq!(e.dropped, vec![1]);
        assert_eq!(e.selected_indices(), vec![0]);
    }
}
