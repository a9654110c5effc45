use serde::{Deserialize, Serialize};

use super::{Interval, RddEstimate};
use crate::error::{RdError, Result};
use crate::stats::{norm_cdf, two_sided_z};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RobustInterval {
    pub center: f64,
    pub se: f64,
    pub ci: Interval,
    pub p_value: f64,
}

/// Interval `(point - bias_term) +- z sqrt(variance / nh)` with a two-sided
/// normal p-value for the null of a zero effect.
pub fn robust_ci(point: f64, bias_term: f64, variance: f64, nh: f64, level: f64) -> Result<RobustInterval> {
    if !(variance >= 0.0) {
        return Err(RdError::invalid(format!("variance must be nonnegative, got {variance}")));
    }
    if !(nh > 0.0) {
        return Err(RdError::invalid("scale n h must be positive"));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(RdError::invalid(format!("confidence level must lie in (0, 1), got {level}")));
    }
    let center = point - bias_term;
    let se = (variance / nh).sqrt();
    let z = two_sided_z(level);
    let p_value = if se > 0.0 {
        2.0 * (1.0 - norm_cdf((center / se).abs()))
    } else if center == 0.0 {
        1.0
    } else {
        0.0
    };
    Ok(RobustInterval {
        center,
        se,
        ci: Interval {
            lower: center - z * se,
            upper: center + z * se,
        },
        p_value,
    })
}

/// Studentized bias-corrected statistic `(tau_bc - tau0) / se_robust`.
pub fn t_statistic(estimate: &RddEstimate, tau0: f64) -> f64 {
    (estimate.tau_bc - tau0) / estimate.se_robust
}

/// Ratio of the adjusted to the unadjusted variance constant.
pub fn relative_efficiency(adjusted: &RddEstimate, unadjusted: &RddEstimate) -> f64 {
    if adjusted.variance == unadjusted.variance {
        return 1.0;
    }
    adjusted.variance / unadjusted.variance
}
