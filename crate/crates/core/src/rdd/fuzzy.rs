use super::sharp::{adjustment, covariate_free_pair, pair_with};
use super::{
    effective_counts, labels, lasso_select, robust_ci, DesignKind, FirstStage, Method, RddEstimate, RddRequest,
    WEAK_JUMP,
};
use crate::error::{RdError, Result};
use crate::kernelfit::DesignLayout;
use crate::localpoly::{deviations, sharp_core, weighted_square, NeighborSets, VarianceEstimator};

/// Fuzzy RD: ratio of the outcome jump to the take-up jump at a common
/// bandwidth, with covariates selected for either equation pooled.
///
/// Inference linearizes the ratio: the per-observation deviations entering the
/// variance are `(d_Y - tau d_W) / tau_W`.
pub fn estimate_fuzzy(req: &RddRequest<'_>) -> Result<RddEstimate> {
    req.validate()?;
    if req.design_kind != DesignKind::Fuzzy {
        return Err(RdError::invalid("estimate_fuzzy called with a non-fuzzy request"));
    }
    let sample = req.sample;
    let w = sample.w().expect("validated").to_vec();
    let y = sample.y();
    let xc = sample.centered_x();
    let pilot = covariate_free_pair(req, &xc)?;

    let cands = req.candidates();
    let (covs, lambda, method) = match req.method {
        _ if cands.is_empty() => (Vec::new(), None, Method::Standard),
        Method::Standard => (Vec::new(), None, Method::Standard),
        Method::CovariateAdjusted => (cands, None, Method::CovariateAdjusted),
        Method::CovariateSelection => {
            let sy = lasso_select(req, y, DesignLayout::LocalLinear, pilot.h, &cands, None)?;
            let sw = lasso_select(req, &w, DesignLayout::LocalLinear, pilot.h, &cands, sy.lambda)?;
            let mut union = sy.selected;
            union.extend(sw.selected);
            union.sort_unstable();
            union.dedup();
            if union.is_empty() {
                (union, None, Method::Standard)
            } else {
                (union, sy.lambda.or(sw.lambda), Method::CovariateSelection)
            }
        }
    };
    let bw = if covs.is_empty() {
        pilot
    } else {
        pair_with(req, &covs, || Ok(pilot))?
    };

    let (kept, gamma_y, dropped) = adjustment(sample, req.kernel, bw.h, &covs, y, DesignLayout::LocalLinear)?;
    let (kept_w, gamma_w, _) = adjustment(sample, req.kernel, bw.h, &covs, &w, DesignLayout::LocalLinear)?;
    debug_assert_eq!(kept, kept_w);
    let ytil = sample.adjusted_outcome(y, &kept, &gamma_y);
    let wtil = sample.adjusted_outcome(&w, &kept, &gamma_w);

    let nn = match req.variance {
        VarianceEstimator::NearestNeighbor { neighbors } => Some(NeighborSets::new(&xc, neighbors)?),
        VarianceEstimator::PluginResidual => None,
    };
    let bw_dev = bw.h.max(bw.b);
    let dev_y = deviations(&xc, &ytil, req.variance, nn.as_ref(), req.kernel, bw_dev)?;
    let dev_w = deviations(&xc, &wtil, req.variance, nn.as_ref(), req.kernel, bw_dev)?;
    let cy = sharp_core(&xc, &ytil, &dev_y, req.kernel, bw)?;
    let cw = sharp_core(&xc, &wtil, &dev_w, req.kernel, bw)?;
    if !(cw.tau.abs() > WEAK_JUMP) {
        return Err(RdError::WeakDiscontinuity { jump: cw.tau });
    }
    if !(cw.tau_bc.abs() > WEAK_JUMP) {
        return Err(RdError::WeakDiscontinuity { jump: cw.tau_bc });
    }
    let tau = cy.tau / cw.tau;
    let tau_bc = cy.tau_bc / cw.tau_bc;
    let conv = cy.weights.conventional();
    let rob = cy.weights.robust();
    let u_conv: Vec<f64> = dev_y.iter().zip(&dev_w).map(|(a, b)| (a - tau * b) / cw.tau).collect();
    let u_rob: Vec<f64> = dev_y.iter().zip(&dev_w).map(|(a, b)| (a - tau_bc * b) / cw.tau_bc).collect();
    let se_conv = weighted_square(&conv, &u_conv).sqrt();
    let se_rob = weighted_square(&rob, &u_rob).sqrt();

    let nh = sample.n() as f64 * bw.h;
    let variance_robust = nh * se_rob * se_rob;
    let ri = robust_ci(tau_bc, 0.0, variance_robust, nh, req.level)?;
    let (n_minus, n_plus) = effective_counts(sample, bw.h);
    Ok(RddEstimate {
        tau_hat: tau,
        tau_bc: ri.center,
        se_robust: ri.se,
        se_conventional: se_conv,
        ci: ri.ci,
        p_value: ri.p_value,
        level: req.level,
        bias: (cy.bias - tau * cw.bias) / cw.tau,
        variance: nh * se_conv * se_conv,
        variance_robust,
        bandwidths: bw,
        n: sample.n(),
        n_minus,
        n_plus,
        selected: labels(sample, &kept),
        gamma: gamma_y,
        dropped,
        method_used: method,
        design_kind: DesignKind::Fuzzy,
        lambda,
        first_stage: Some(FirstStage {
            tau_hat: cw.tau,
            tau_bc: cw.tau_bc,
            se_robust: cw.se_robust,
        }),
        kink_denominator: None,
    })
}

#[cfg(test)]
mod tests {
    use crate::kernelfit::Sample;
    use crate::rdd::{estimate, DesignKind, Method, RddRequest};
    use crate::error::RdError;
    use approx::assert_abs_diff_eq;
    use nalgebra::DMatrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn sample(n: usize, seed: u64) -> Sample {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut z = DMatrix::zeros(n, 3);
        for v in z.iter_mut() {
            *v = rng.sample::<f64, _>(StandardNormal);
        }
        let y = (0..n)
            .map(|i| {
                let t = if x[i] >= 0.0 { 0.2 } else { 0.0 };
                t + x[i] + 0.5 * z[(i, 0)] + 0.2 * rng.sample::<f64, _>(StandardNormal)
            })
            .collect();
        Sample::new(x, y, z, 0.0).unwrap()
    }

    #[test]
    fn full_compliance_matches_sharp() {
        let s = sample(500, 1);
        let t = s.treatment();
        let f = s.clone().with_takeup(t).unwrap();
        for m in [Method::Standard, Method::CovariateAdjusted, Method::CovariateSelection] {
            let sharp = estimate(&RddRequest::new(&s).method(m)).unwrap();
            let fuzzy = estimate(&RddRequest::new(&f).method(m).design(DesignKind::Fuzzy)).unwrap();
            let fs = fuzzy.first_stage.unwrap();
            assert_abs_diff_eq!(fs.tau_hat, 1.0, epsilon = 1e-12);
            assert_abs_diff_eq!(fuzzy.tau_hat, sharp.tau_hat, epsilon = 1e-10);
            assert_abs_diff_eq!(fuzzy.tau_bc, sharp.tau_bc, epsilon = 1e-10);
            assert_abs_diff_eq!(fuzzy.se_robust, sharp.se_robust, epsilon = 1e-10);
            assert_eq!(fuzzy.selected, sharp.selected);
        }
    }

    #[test]
    fn no_jump_in_takeup_is_weak() {
        let s = sample(300, 2);
        let w: Vec<f64> = s.x().iter().map(|_| 1.0).collect();
        let f = s.with_takeup(w).unwrap();
        let r = RddRequest::new(&f).design(DesignKind::Fuzzy).method(Method::Standard);
        assert!(matches!(estimate(&r), Err(RdError::WeakDiscontinuity { .. })));
    }
}
