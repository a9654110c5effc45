#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rdlasso::kernelfit::{build_design, Design, KernelFamily, KernelSpec, Sample};
use rdlasso::stats::norm_cdf;

/// Sample with `x ~ U(-1, 1)`, `z ~ N(0, 1)` and `y = jump 1{x >= 0} + x + z gamma + noise e`.
pub fn linear_sample(rng: &mut ChaCha8Rng, n: usize, p: usize, jump: f64, gamma: &[f64], noise: f64) -> Sample {
    let x: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    let mut z = DMatrix::zeros(n, p);
    for v in z.iter_mut() {
        *v = rng.sample::<f64, _>(StandardNormal);
    }
    let y = (0..n)
        .map(|i| {
            let t = if x[i] >= 0.0 { jump } else { 0.0 };
            let lin: f64 = gamma.iter().enumerate().map(|(j, g)| g * z[(i, j)]).sum();
            t + x[i] + lin + noise * rng.sample::<f64, _>(StandardNormal)
        })
        .collect();
    Sample::new(x, y, z, 0.0).unwrap()
}

/// Small random Lasso problem with at least three rows on each side of the cutoff.
pub fn small_problem(rng: &mut ChaCha8Rng, n: usize, p: usize) -> Design {
    let half = n / 2;
    let x: Vec<f64> = (0..n)
        .map(|i| {
            let u: f64 = rng.random_range(0.05..0.95);
            if i < half {
                -u
            } else {
                u
            }
        })
        .collect();
    let mut z = DMatrix::zeros(n, p);
    for v in z.iter_mut() {
        *v = rng.sample::<f64, _>(StandardNormal);
    }
    let coefs: Vec<f64> = (0..p).map(|_| rng.random_range(-1.0..1.0)).collect();
    let y = (0..n)
        .map(|i| {
            let lin: f64 = (0..p).map(|j| coefs[j] * z[(i, j)]).sum();
            0.3 * x[i] + if x[i] >= 0.0 { 0.5 } else { 0.0 } + lin + 0.5 * rng.sample::<f64, _>(StandardNormal)
        })
        .collect();
    let s = Sample::new(x, y, z, 0.0).unwrap();
    let cols: Vec<usize> = (0..p).collect();
    build_design(&s, &KernelSpec::new(KernelFamily::Triangular, 1.0).unwrap(), &cols).unwrap()
}

/// `(1 / nh) sum K (y - G theta)^2 + sum pw |theta|`, computed from the raw design.
pub fn objective(d: &Design, theta: &[f64], pw: &[f64]) -> f64 {
    let g = d.g();
    let mut loss = 0.0;
    for r in 0..d.n_loc() {
        let fit: f64 = (0..d.ncols()).map(|c| g[(r, c)] * theta[c]).sum();
        let e = d.response()[r] - fit;
        loss += d.weights()[r] * e * e;
    }
    loss / d.scale() + theta.iter().zip(pw).map(|(t, w)| w * t.abs()).sum::<f64>()
}

/// Gradient of the smooth part of [`objective`].
pub fn gradient(d: &Design, theta: &[f64]) -> Vec<f64> {
    let g = d.g();
    let resid: Vec<f64> = (0..d.n_loc())
        .map(|r| d.response()[r] - (0..d.ncols()).map(|c| g[(r, c)] * theta[c]).sum::<f64>())
        .collect();
    (0..d.ncols())
        .map(|c| {
            -2.0 / d.scale()
                * (0..d.n_loc())
                    .map(|r| d.weights()[r] * g[(r, c)] * resid[r])
                    .sum::<f64>()
        })
        .collect()
}

/// Largest violation of the subgradient optimality conditions.
pub fn kkt_violation(d: &Design, theta: &[f64], pw: &[f64], unpenalized: &[usize]) -> f64 {
    let g = gradient(d, theta);
    (0..d.ncols())
        .map(|j| {
            if unpenalized.contains(&j) {
                g[j].abs()
            } else if theta[j] != 0.0 {
                (g[j] + pw[j] * theta[j].signum()).abs()
            } else {
                (g[j].abs() - pw[j]).max(0.0)
            }
        })
        .fold(0.0, f64::max)
}

/// Exact minimum of [`objective`] over all sign patterns of the penalized
/// columns (`{-1, 0, 1}^p`), with the first `n_base` columns free.
///
/// Each pattern fixes the penalty's gradient, leaving a linear system on the
/// active columns. Every candidate is a feasible point, and the minimizer is the
/// candidate of its own sign pattern, so the smallest objective is the minimum.
pub fn exact_minimum(d: &Design, pw: &[f64], n_base: usize) -> f64 {
    let k = d.ncols();
    let p = k - n_base;
    let g = d.g();
    let s = d.scale();
    let mut best = f64::INFINITY;
    for code in 0..3usize.pow(p as u32) {
        let mut signs = vec![0.0; p];
        let mut c = code;
        for v in signs.iter_mut() {
            *v = (c % 3) as f64 - 1.0;
            c /= 3;
        }
        let active: Vec<usize> = (0..n_base).chain((0..p).filter(|&j| signs[j] != 0.0).map(|j| j + n_base)).collect();
        let a = active.len();
        let mut lhs = DMatrix::zeros(a, a);
        let mut rhs = DVector::zeros(a);
        for (ia, &ca) in active.iter().enumerate() {
            for (ib, &cb) in active.iter().enumerate() {
                lhs[(ia, ib)] = 2.0 / s * (0..d.n_loc()).map(|r| d.weights()[r] * g[(r, ca)] * g[(r, cb)]).sum::<f64>();
            }
            rhs[ia] = 2.0 / s * (0..d.n_loc()).map(|r| d.weights()[r] * g[(r, ca)] * d.response()[r]).sum::<f64>();
            if ca >= n_base {
                rhs[ia] -= pw[ca] * signs[ca - n_base];
            }
        }
        let Some(sol) = lhs.lu().solve(&rhs) else { continue };
        let mut theta = vec![0.0; k];
        for (ia, &ca) in active.iter().enumerate() {
            theta[ca] = sol[ia];
        }
        best = best.min(objective(d, &theta, pw));
    }
    best
}

/// One-sample Kolmogorov-Smirnov test against N(0, 1): `(D, p-value)`, with
/// Stephens' small-sample correction of the asymptotic distribution.
pub fn ks_normal(values: &[f64]) -> (f64, f64) {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = v.len() as f64;
    let mut d = 0.0_f64;
    for (i, &x) in v.iter().enumerate() {
        let f = norm_cdf(x);
        d = d.max((i as f64 + 1.0) / n - f).max(f - i as f64 / n);
    }
    let t = d * (n.sqrt() + 0.12 + 0.11 / n.sqrt());
    let mut p = 0.0;
    for k in 1..=100 {
        let k = k as f64;
        p += 2.0 * (-1.0_f64).powf(k - 1.0) * (-2.0 * k * k * t * t).exp();
    }
    (d, p.clamp(0.0, 1.0))
}
