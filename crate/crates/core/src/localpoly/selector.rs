//! Three-step MSE-optimal bandwidth selection: a third-derivative pilot `d`,
//! then the curvature bandwidth `b`, then the main bandwidth `h`. Each step
//! works side by side and combines the two sides' variance and bias constants.

use nalgebra::DMatrix;

use super::{
    deviations, poly_weights, sample_sd, BandwidthOptions, BandwidthPair, NeighborSets, Side, VarianceEstimator,
    COLLINEAR_TOL,
};
use crate::error::{RdError, Result};
use crate::kernelfit::{independent_gram_columns, KernelFamily, Sample};

/// Quantile of the inverse empirical CDF, averaging at discontinuities.
fn quantile_avg(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    let np = n as f64 * p;
    let j = np.floor() as usize;
    if (np - j as f64).abs() < 1e-12 && j > 0 {
        0.5 * (sorted[j - 1] + sorted[j.min(n - 1)])
    } else {
        sorted[j.min(n - 1)]
    }
}

/// Robust spread `min(sd, IQR / 1.349)`.
pub(crate) fn robust_spread(x: &[f64]) -> f64 {
    let mut s = x.to_vec();
    s.sort_by(f64::total_cmp);
    let iqr = quantile_avg(&s, 0.75) - quantile_avg(&s, 0.25);
    let sd = sample_sd(x);
    if iqr > 0.0 {
        sd.min(iqr / 1.349)
    } else {
        sd
    }
}

struct Context<'a> {
    xc: &'a [f64],
    y: &'a [f64],
    z: &'a DMatrix<f64>,
    selected: &'a [usize],
    gamma: Option<&'a [f64]>,
    family: KernelFamily,
    variance: VarianceEstimator,
    nn: Option<NeighborSets>,
    c_bw: f64,
}

/// Variance constant, bias constant and regularization term of one side.
#[derive(Debug, Clone, Copy)]
struct Constants {
    v: f64,
    b: f64,
    r: f64,
}

impl Context<'_> {
    /// Outcome net of the selected covariates, with coefficients from the
    /// degree-`o` fit on `side` at the pilot bandwidth unless supplied.
    fn adjusted(&self, side: Side, o: usize) -> Result<Vec<f64>> {
        if self.selected.is_empty() {
            return Ok(self.y.to_vec());
        }
        let gamma = match self.gamma {
            Some(g) => g.to_vec(),
            None => self.side_gamma(side, o)?,
        };
        let mut out = self.y.to_vec();
        for (i, v) in out.iter_mut().enumerate() {
            for (&j, g) in self.selected.iter().zip(&gamma) {
                *v -= g * self.z[(i, j)];
            }
        }
        Ok(out)
    }

    fn side_gamma(&self, side: Side, o: usize) -> Result<Vec<f64>> {
        let rows: Vec<(usize, f64)> = self
            .xc
            .iter()
            .enumerate()
            .filter(|(_, &x)| side.contains(x))
            .map(|(i, &x)| (i, self.family.eval(x / self.c_bw)))
            .filter(|&(_, k)| k > 0.0)
            .collect();
        let d = o + 1;
        let q = self.selected.len();
        let k = d + q;
        let mut g = DMatrix::zeros(rows.len(), k);
        for (r, &(i, _)) in rows.iter().enumerate() {
            let u = self.xc[i] / self.c_bw;
            let mut p = 1.0;
            for a in 0..d {
                g[(r, a)] = p;
                p *= u;
            }
            for (c, &j) in self.selected.iter().enumerate() {
                g[(r, d + c)] = self.z[(i, j)];
            }
        }
        let mut gw = g.clone();
        for (r, &(_, w)) in rows.iter().enumerate() {
            gw.row_mut(r).scale_mut(w);
        }
        let gram = gw.transpose() * &g;
        let keep = independent_gram_columns(&gram, d, COLLINEAR_TOL);
        let sub = DMatrix::from_fn(keep.len(), keep.len(), |a, b| gram[(keep[a], keep[b])]);
        let rhs = DMatrix::from_fn(keep.len(), 1, |a, _| {
            rows.iter()
                .enumerate()
                .map(|(r, &(i, _))| gw[(r, keep[a])] * self.y[i])
                .sum::<f64>()
        });
        let chol = sub.cholesky().ok_or(RdError::SingularDesign { rcond: 0.0 })?;
        let coef = chol.solve(&rhs);
        let mut gamma = vec![0.0; q];
        for (pos, &c) in keep.iter().enumerate() {
            if c >= d {
                gamma[c - d] = coef[pos];
            }
        }
        Ok(gamma)
    }

    fn deviations(&self, v: &[f64], bw: f64) -> Result<Vec<f64>> {
        deviations(self.xc, v, self.variance, self.nn.as_ref(), self.family, bw)
    }

    /// Constants for estimating the `nu`-th coefficient with a degree-`o`
    /// fit at the pilot bandwidth, with the leading bias term taken from a
    /// degree-`o + 1` fit at `h_b`.
    fn constants(&self, side: Side, o: usize, nu: usize, h_b: f64, scale: f64) -> Result<Constants> {
        let yt = self.adjusted(side, o)?;
        let pv = poly_weights(self.xc, side, o, self.c_bw, self.family)?;
        let dev_v = self.deviations(&yt, self.c_bw)?;
        let var_v = pv.variance(nu, &dev_v);
        let bconst = self.c_bw.powi(nu as i32) * pv.moment(nu, self.xc, (o + 1) as i32)
            / self.c_bw.powi((o + 1) as i32);

        let pb = poly_weights(self.xc, side, o + 1, h_b, self.family)?;
        let lead = pb.apply(o + 1, &yt);
        let reg = if scale > 0.0 {
            let dev_b = self.deviations(&yt, h_b)?;
            3.0 * bconst * bconst * pb.variance(o + 1, &dev_b)
        } else {
            0.0
        };
        let m = (2 * (o + 1 - nu)) as f64;
        Ok(Constants {
            v: (2 * nu + 1) as f64 * self.c_bw.powi(2 * nu as i32 + 1) * var_v,
            b: m.sqrt() * bconst * lead,
            r: scale * m * reg,
        })
    }

    /// Combined rule `((V_l + V_r) / ((B_r - B_l)^2 + R_l + R_r))^{1/(2o+3)}`.
    fn step(&self, o: usize, nu: usize, h_b: [f64; 2], scale: f64, cap: f64) -> Result<f64> {
        let l = self.constants(Side::Left, o, nu, h_b[0], scale)?;
        let r = self.constants(Side::Right, o, nu, h_b[1], scale)?;
        let num = l.v + r.v;
        let den = (r.b - l.b).powi(2) + l.r + r.r;
        let h = (num / den).powf(1.0 / (2 * o + 3) as f64);
        Ok(if h.is_finite() && h > 0.0 { h.min(cap) } else { cap })
    }
}

pub(crate) fn three_step_bandwidth(
    sample: &Sample,
    selected: &[usize],
    gamma: Option<&[f64]>,
    family: KernelFamily,
    options: &BandwidthOptions,
) -> Result<BandwidthPair> {
    let xc = sample.centered_x();
    let n = xc.len();
    let range = |side: Side| {
        xc.iter()
            .filter(|&&x| side.contains(x))
            .fold(0.0_f64, |m, &x| m.max(x.abs()))
    };
    let (range_l, range_r) = (range(Side::Left), range(Side::Right));
    if !(range_l > 0.0) {
        return Err(RdError::EmptySide { side: Side::Left });
    }
    if !(range_r > 0.0) {
        return Err(RdError::EmptySide { side: Side::Right });
    }
    let cap = range_l.max(range_r);
    let c_bw = (options.pilot_constant * robust_spread(&xc) * (n as f64).powf(-0.2)).min(cap);
    let nn = match options.variance {
        VarianceEstimator::NearestNeighbor { neighbors } => Some(NeighborSets::new(&xc, neighbors)?),
        VarianceEstimator::PluginResidual => None,
    };
    let ctx = Context {
        xc: &xc,
        y: sample.y(),
        z: sample.z(),
        selected,
        gamma,
        family,
        variance: options.variance,
        nn,
        c_bw,
    };
    let pad = 1.0 + f64::EPSILON.sqrt();
    let reg = options.regularization;
    let d = ctx.step(3, 3, [range_l * pad, range_r * pad], 0.0, cap)?;
    let b = ctx.step(2, 2, [d, d], reg, cap)?;
    let h = ctx.step(1, 0, [b, b], reg, cap)?;
    if options.restricted {
        BandwidthPair::restricted(h)
    } else {
        BandwidthPair::new(h, b)
    }
}
