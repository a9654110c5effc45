//! The three simulation designs: a Beta-distributed running variable, one
//! first-stage covariate `Z` with a kinked conditional mean, and an AR(1)
//! block of Gaussian covariates `W`.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{RdError, Result};
use crate::kernelfit::Sample;

pub const SIGMA_Y: f64 = 0.1295;
pub const SIGMA_Z: f64 = 0.1353;
pub const RHO: f64 = 0.2692;
/// Lag-one correlation of the `W` block.
pub const W_AR: f64 = 0.5;

/// Quintic coefficients, constant term first.
pub type Quintic = [f64; 6];

pub const MU_Z_LEFT: Quintic = [0.49, 1.06, 5.74, 17.14, 19.75, 7.47];
pub const MU_Z_RIGHT: Quintic = [0.49, 0.61, 0.23, -3.46, 6.43, -3.48];

pub const MU1_DGP1_LEFT: Quintic = [0.48, 1.27, 7.18, 20.21, 21.54, 7.33];
pub const MU1_DGP1_RIGHT: Quintic = [0.52, 0.84, -3.00, 7.99, -9.01, 3.56];

pub const MU1_DGP2_LEFT: Quintic = [0.36, 0.96, 5.47, 15.28, 15.87, 5.14];
pub const MU1_DGP2_RIGHT: Quintic = [0.38, 0.62, -2.84, 8.42, -10.24, 4.31];

/// Slope of `Y` on `Z` left and right of the cutoff (zero in the first design).
pub const MU2_LEFT: f64 = 0.22;
pub const MU2_RIGHT: f64 = 0.28;

pub fn horner(c: &Quintic, x: f64) -> f64 {
    c.iter().rev().fold(0.0, |acc, &a| acc * x + a)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dgp {
    Dgp1,
    Dgp2,
    Dgp3,
}

impl Dgp {
    pub const ALL: [Dgp; 3] = [Dgp::Dgp1, Dgp::Dgp2, Dgp::Dgp3];

    pub fn name(self) -> &'static str {
        match self {
            Dgp::Dgp1 => "dgp1",
            Dgp::Dgp2 => "dgp2",
            Dgp::Dgp3 => "dgp3",
        }
    }

    fn mu1(self) -> (&'static Quintic, &'static Quintic) {
        match self {
            Dgp::Dgp1 => (&MU1_DGP1_LEFT, &MU1_DGP1_RIGHT),
            Dgp::Dgp2 | Dgp::Dgp3 => (&MU1_DGP2_LEFT, &MU1_DGP2_RIGHT),
        }
    }

    /// Coefficient on `W_h`, `h = 1, 2, ...`.
    pub fn pi(self, h: usize) -> f64 {
        match self {
            Dgp::Dgp1 => 0.0,
            Dgp::Dgp2 => 0.2f64.powi(h as i32),
            Dgp::Dgp3 => 0.5f64.powi(h as i32),
        }
    }

    /// `(left, right)` slope on `Z`.
    pub fn mu2(self) -> (f64, f64) {
        match self {
            Dgp::Dgp1 => (0.0, 0.0),
            Dgp::Dgp2 | Dgp::Dgp3 => (MU2_LEFT, MU2_RIGHT),
        }
    }
}

impl fmt::Display for Dgp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Dgp {
    type Err = RdError;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "dgp1" | "1" => Ok(Dgp::Dgp1),
            "dgp2" | "2" => Ok(Dgp::Dgp2),
            "dgp3" | "3" => Ok(Dgp::Dgp3),
            other => Err(RdError::invalid(format!("unknown dgp '{other}'"))),
        }
    }
}

pub fn mu_z(x: f64) -> f64 {
    if x < 0.0 {
        horner(&MU_Z_LEFT, x)
    } else {
        horner(&MU_Z_RIGHT, x)
    }
}

pub fn mu1(dgp: Dgp, x: f64) -> f64 {
    let (l, r) = dgp.mu1();
    if x < 0.0 {
        horner(l, x)
    } else {
        horner(r, x)
    }
}

/// `E[Y | X = x]`; the `W` block is mean-zero and independent of `X`.
pub fn conditional_mean(dgp: Dgp, x: f64) -> f64 {
    let (l, r) = dgp.mu2();
    mu1(dgp, x) + if x < 0.0 { l } else { r } * mu_z(x)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DgpSpec {
    pub dgp: Dgp,
    pub n: usize,
    /// Total covariate count: `Z` plus `p - 1` columns of `W`.
    pub p: usize,
    pub seed: u64,
}

impl DgpSpec {
    pub fn new(dgp: Dgp, n: usize, p: usize, seed: u64) -> Result<Self> {
        let spec = Self { dgp, n, p, seed };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 50 {
            return Err(RdError::invalid(format!("simulation needs n >= 50, got {}", self.n)));
        }
        if self.p == 0 && self.dgp != Dgp::Dgp1 {
            return Err(RdError::invalid(format!("{} needs p >= 1", self.dgp)));
        }
        Ok(())
    }

    pub fn with_p(self, p: usize) -> Self {
        Self { p, ..self }
    }
}

/// Jump of `E[Y | X]` at zero.
pub fn true_tau(spec: &DgpSpec) -> f64 {
    let (l1, r1) = spec.dgp.mu1();
    let (l2, r2) = spec.dgp.mu2();
    (r1[0] - l1[0]) + (r2 - l2) * MU_Z_RIGHT[0]
}

/// Generator for one replication. Each replication owns a ChaCha stream, so
/// draws do not depend on how replications are scheduled.
pub fn replication_rng(seed: u64, replication: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(replication);
    rng
}

/// Draws one sample. Columns are `z, w1, ..., w{p-1}`; the outcome loads on
/// all `p` components of `W`, so the last one is never observed.
///
/// `X` and both errors are drawn unit by unit first, then `W` one component
/// at a time, so samples sharing `(seed, replication)` but differing in `p`
/// share `X`, `Z` and the leading `W` columns.
pub fn draw_sample(spec: &DgpSpec, replication: u64) -> Sample {
    spec.validate().expect("invalid DgpSpec");
    let DgpSpec { dgp, n, p, .. } = *spec;
    let mut rng = replication_rng(spec.seed, replication);
    let beta = Beta::new(2.0, 4.0).expect("valid beta parameters");
    let (l2, r2) = dgp.mu2();
    let innov = (1.0 - W_AR * W_AR).sqrt();
    let shock = (1.0 - RHO * RHO).sqrt();

    let mut x = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    let mut z = DMatrix::zeros(n, p);
    for i in 0..n {
        let xi = 2.0 * rng.sample::<f64, _>(beta) - 1.0;
        let e1: f64 = rng.sample(StandardNormal);
        let e2: f64 = rng.sample(StandardNormal);
        let zi = mu_z(xi) + SIGMA_Z * (RHO * e1 + shock * e2);
        x.push(xi);
        y.push(mu1(dgp, xi) + if xi < 0.0 { l2 } else { r2 } * zi + SIGMA_Y * e1);
        if p > 0 {
            z[(i, 0)] = zi;
        }
    }
    let mut w = vec![0.0; n];
    for h in 1..=p {
        let pi = dgp.pi(h);
        for i in 0..n {
            let e: f64 = rng.sample(StandardNormal);
            w[i] = if h == 1 { e } else { W_AR * w[i] + innov * e };
            y[i] += pi * w[i];
            if h < p {
                z[(i, h)] = w[i];
            }
        }
    }
    let names = covariate_names(p);
    Sample::new(x, y, z, 0.0)
        .and_then(|s| s.with_covariate_names(names))
        .expect("simulated sample is well formed")
}

pub fn covariate_names(p: usize) -> Vec<String> {
    (0..p).map(|j| if j == 0 { "z".to_string() } else { format!("w{j}") }).collect()
}
