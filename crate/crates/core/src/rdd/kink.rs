//! Regression kink design: the slope change at the cutoff divided by the
//! known kink of the policy rule.
//!
//! The local regression uses `(1, T X, X, T X^2, X^2)` (a common intercept
//! with side-specific slopes and curvatures) plus covariates. The coefficient
//! on `T X` is the slope change. Its leading bias comes from one-sided cubic
//! terms; correction uses one-sided local cubic fits at the pilot bandwidth.

use nalgebra::DMatrix;

use super::sharp::adjustment;
use super::{
    effective_counts, labels, lasso_select, robust_ci, BandwidthMode, DesignKind, Method, RddEstimate, RddRequest,
};
use crate::error::{RdError, Result};
use crate::kernelfit::{equilibrated_rcond, DesignLayout, KernelFamily, RCOND_THRESHOLD};
use crate::localpoly::{
    capped_rule, deviations, pilot_bandwidth, poly_weights, range_cap, side_index, weighted_square, BandwidthOptions,
    BandwidthPair, PolyWeights, Side,
};

/// Weights mapping outcomes to the slope-change coefficient of the joint fit.
fn slope_change_weights(xc: &[f64], family: KernelFamily, h: f64) -> Result<Vec<f64>> {
    let mut idx = Vec::new();
    let mut kw = Vec::new();
    for (i, &x) in xc.iter().enumerate() {
        let k = family.eval(x / h);
        if k > 0.0 {
            idx.push(i);
            kw.push(k);
        }
    }
    for side in Side::BOTH {
        let avail = idx.iter().filter(|&&i| side.contains(xc[i])).count();
        if avail < 3 {
            return Err(RdError::InsufficientData {
                side,
                needed: 3,
                available: avail,
            });
        }
    }
    let m = idx.len();
    let mut ku = DMatrix::zeros(5, m);
    let mut gram = DMatrix::zeros(5, 5);
    for (c, (&i, &k)) in idx.iter().zip(&kw).enumerate() {
        let u = xc[i] / h;
        let t = if xc[i] >= 0.0 { 1.0 } else { 0.0 };
        let row = [1.0, t * u, u, t * u * u, u * u];
        for a in 0..5 {
            ku[(a, c)] = k * row[a];
            for b in 0..5 {
                gram[(a, b)] += k * row[a] * row[b];
            }
        }
    }
    gram /= m as f64;
    let (rcond, _) = equilibrated_rcond(&gram);
    if !(rcond >= RCOND_THRESHOLD) {
        return Err(RdError::SingularDesign { rcond });
    }
    let chol = gram.cholesky().ok_or(RdError::SingularDesign { rcond })?;
    let w = chol.solve(&ku) / m as f64;
    let mut out = vec![0.0; xc.len()];
    for (c, &i) in idx.iter().enumerate() {
        out[i] = w[(1, c)] / h;
    }
    Ok(out)
}

struct KinkCore {
    delta: f64,
    bias: f64,
    delta_bc: f64,
    se_conventional: f64,
    se_robust: f64,
    /// `A_s = sum_{i in s} l_i x_i^3`.
    a: [f64; 2],
    cubic: [PolyWeights; 2],
}

fn kink_core(xc: &[f64], y: &[f64], dev: &[f64], family: KernelFamily, bw: BandwidthPair) -> Result<KinkCore> {
    let l = slope_change_weights(xc, family, bw.h)?;
    let mut a = [0.0; 2];
    for (i, &x) in xc.iter().enumerate() {
        if l[i] != 0.0 {
            a[if x >= 0.0 { 1 } else { 0 }] += l[i] * x * x * x;
        }
    }
    let cubic = [
        poly_weights(xc, Side::Left, 3, bw.b, family)?,
        poly_weights(xc, Side::Right, 3, bw.b, family)?,
    ];
    let mut rob = l.clone();
    let mut bias = 0.0;
    for s in 0..2 {
        cubic[s].add_row(3, -a[s], &mut rob);
        bias += a[s] * cubic[s].apply(3, y);
    }
    let dot = |w: &[f64]| w.iter().zip(y).map(|(a, b)| a * b).sum::<f64>();
    Ok(KinkCore {
        delta: dot(&l),
        bias,
        delta_bc: dot(&rob),
        se_conventional: weighted_square(&l, dev).sqrt(),
        se_robust: weighted_square(&rob, dev).sqrt(),
        a,
        cubic,
    })
}

/// MSE-optimal `(h, b)` for the slope-change estimator on outcome `y`.
fn kink_bandwidth(xc: &[f64], y: &[f64], family: KernelFamily, options: &BandwidthOptions) -> Result<BandwidthPair> {
    let n = xc.len() as f64;
    let cap = range_cap(xc);
    if !(cap > 0.0) {
        let side = if xc.iter().any(|&x| x < 0.0) { Side::Right } else { Side::Left };
        return Err(RdError::EmptySide { side });
    }
    let b0 = pilot_bandwidth(xc, options.pilot_constant);
    let dev = deviations(xc, y, options.variance, None, family, b0)?;
    let core = kink_core(xc, y, &dev, family, BandwidthPair { h: b0, b: b0, restricted: true })?;
    // bias(h) = B h^2, var(h) = V / (n h^3)
    let bt = core.bias / (b0 * b0);
    let vt = core.se_conventional.powi(2) * n * b0.powi(3);
    let h = if bt == 0.0 || bt * bt < 1e-12 * vt {
        cap
    } else {
        capped_rule(Some((3.0 * vt / (4.0 * n * bt * bt)).powf(1.0 / 7.0)), cap)
    };
    if options.restricted {
        return BandwidthPair::restricted(h);
    }
    // Curvature target sum_s A_s c3_s: bias from quartic terms, variance from the weights.
    let mut target = vec![0.0; xc.len()];
    let mut bias_d = 0.0;
    for side in Side::BOTH {
        let s = side_index(side);
        core.cubic[s].add_row(3, core.a[s], &mut target);
        let quartic = poly_weights(xc, side, 4, b0, family)?;
        bias_d += core.a[s] * core.cubic[s].moment(3, xc, 4) * quartic.apply(4, y);
    }
    let bt = bias_d / b0;
    let vt = weighted_square(&target, &dev) * n * b0.powi(7);
    let b = if bt == 0.0 || bt * bt < 1e-12 * vt {
        cap
    } else {
        capped_rule(Some((7.0 * vt / (2.0 * n * bt * bt)).powf(1.0 / 9.0)), cap)
    };
    BandwidthPair::new(h, b)
}

/// Kink estimate `delta / b0` with bias-corrected inference.
pub fn estimate_kink(req: &RddRequest<'_>) -> Result<RddEstimate> {
    req.validate()?;
    if req.design_kind != DesignKind::Kink {
        return Err(RdError::invalid("estimate_kink called with a non-kink request"));
    }
    let b0 = req.kink_denominator.expect("validated");
    let sample = req.sample;
    let xc = sample.centered_x();
    let opts = req.bandwidth_options();
    let free = || -> Result<BandwidthPair> {
        match req.fixed_pair()? {
            Some(p) => Ok(p),
            None => kink_bandwidth(&xc, sample.y(), req.kernel, &opts),
        }
    };
    let cands = req.candidates();
    let (covs, lambda, method, pilot) = match req.method {
        _ if cands.is_empty() => (Vec::new(), None, Method::Standard, free()?),
        Method::Standard => (Vec::new(), None, Method::Standard, free()?),
        Method::CovariateAdjusted => (cands, None, Method::CovariateAdjusted, free()?),
        Method::CovariateSelection => {
            let pilot = free()?;
            let sel = lasso_select(req, sample.y(), DesignLayout::KinkQuadratic, pilot.h, &cands, None)?;
            if sel.selected.is_empty() {
                (Vec::new(), None, Method::Standard, pilot)
            } else {
                (sel.selected, sel.lambda, Method::CovariateSelection, pilot)
            }
        }
    };
    let bw = match req.bandwidth_mode {
        _ if covs.is_empty() => pilot,
        BandwidthMode::Fixed { .. } | BandwidthMode::AutoWithoutCovariates => pilot,
        BandwidthMode::AutoWithCovariates | BandwidthMode::Adaptive => {
            let bp = pilot_bandwidth(&xc, opts.pilot_constant);
            let (kept, g, _) = adjustment(sample, req.kernel, bp, &covs, sample.y(), DesignLayout::KinkQuadratic)?;
            let yt = sample.adjusted_outcome(sample.y(), &kept, &g);
            kink_bandwidth(&xc, &yt, req.kernel, &opts)?
        }
    };

    let (kept, gamma, dropped) = adjustment(sample, req.kernel, bw.h, &covs, sample.y(), DesignLayout::KinkQuadratic)?;
    let ytil = sample.adjusted_outcome(sample.y(), &kept, &gamma);
    let dev = deviations(&xc, &ytil, req.variance, None, req.kernel, bw.h.max(bw.b))?;
    let core = kink_core(&xc, &ytil, &dev, req.kernel, bw)?;

    let nh = sample.n() as f64 * bw.h;
    let se_conv = core.se_conventional / b0.abs();
    let se_rob = core.se_robust / b0.abs();
    let variance_robust = nh * se_rob * se_rob;
    let ri = robust_ci(core.delta / b0, core.bias / b0, variance_robust, nh, req.level)?;
    debug_assert!((ri.center - core.delta_bc / b0).abs() <= 1e-8 * (1.0 + ri.center.abs()));
    let (n_minus, n_plus) = effective_counts(sample, bw.h);
    Ok(RddEstimate {
        tau_hat: core.delta / b0,
        tau_bc: ri.center,
        se_robust: ri.se,
        se_conventional: se_conv,
        ci: ri.ci,
        p_value: ri.p_value,
        level: req.level,
        bias: core.bias / (b0 * bw.h * bw.h),
        variance: nh * se_conv * se_conv,
        variance_robust,
        bandwidths: bw,
        n: sample.n(),
        n_minus,
        n_plus,
        selected: labels(sample, &kept),
        gamma,
        dropped,
        method_used: method,
        design_kind: DesignKind::Kink,
        lambda,
        first_stage: None,
        kink_denominator: Some(b0),
    })
}
