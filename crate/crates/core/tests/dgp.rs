use rdlasso::sim::dgp::{
    horner, mu1, mu_z, Quintic, MU1_DGP1_LEFT, MU1_DGP1_RIGHT, MU1_DGP2_LEFT, MU1_DGP2_RIGHT, MU2_LEFT, MU2_RIGHT,
    MU_Z_LEFT, MU_Z_RIGHT, RHO, SIGMA_Y, SIGMA_Z,
};
use rdlasso::sim::{draw_sample, true_tau, Dgp, DgpSpec};

// Coefficients typed in a second time, independently of the library constants,
// constant term first.
const Z_LEFT: Quintic = [0.49, 1.06, 5.74, 17.14, 19.75, 7.47];
const Z_RIGHT: Quintic = [0.49, 0.61, 0.23, -3.46, 6.43, -3.48];
const D1_LEFT: Quintic = [0.48, 1.27, 7.18, 20.21, 21.54, 7.33];
const D1_RIGHT: Quintic = [0.52, 0.84, -3.00, 7.99, -9.01, 3.56];
const D2_LEFT: Quintic = [0.36, 0.96, 5.47, 15.28, 15.87, 5.14];
const D2_RIGHT: Quintic = [0.38, 0.62, -2.84, 8.42, -10.24, 4.31];

#[test]
fn coefficient_tables() {
    assert_eq!(MU_Z_LEFT, Z_LEFT);
    assert_eq!(MU_Z_RIGHT, Z_RIGHT);
    assert_eq!(MU1_DGP1_LEFT, D1_LEFT);
    assert_eq!(MU1_DGP1_RIGHT, D1_RIGHT);
    assert_eq!(MU1_DGP2_LEFT, D2_LEFT);
    assert_eq!(MU1_DGP2_RIGHT, D2_RIGHT);
    assert_eq!((MU2_LEFT, MU2_RIGHT), (0.22, 0.28));
    assert_eq!((SIGMA_Y, SIGMA_Z, RHO), (0.1295, 0.1353, 0.2692));
    assert_eq!(Dgp::Dgp1.mu2(), (0.0, 0.0));
    assert_eq!(Dgp::Dgp1.pi(1), 0.0);
    assert_eq!(Dgp::Dgp1.pi(7), 0.0);
    assert_eq!(Dgp::Dgp2.pi(3), 0.2f64.powi(3));
    assert_eq!(Dgp::Dgp3.pi(3), 0.5f64.powi(3));
    assert_eq!(Dgp::Dgp3.mu2(), Dgp::Dgp2.mu2());
}

#[test]
fn mean_functions_follow_the_tables() {
    for x in [-0.9f64, -0.4, -1e-3, 0.0, 2e-3, 0.3, 0.99] {
        let (z, d1, d2) = if x < 0.0 { (Z_LEFT, D1_LEFT, D2_LEFT) } else { (Z_RIGHT, D1_RIGHT, D2_RIGHT) };
        let power = |c: &Quintic| c.iter().enumerate().map(|(k, a)| a * x.powi(k as i32)).sum::<f64>();
        assert!((mu_z(x) - power(&z)).abs() < 1e-12);
        assert!((mu1(Dgp::Dgp1, x) - power(&d1)).abs() < 1e-12);
        assert!((mu1(Dgp::Dgp2, x) - power(&d2)).abs() < 1e-12);
        assert_eq!(mu1(Dgp::Dgp3, x), mu1(Dgp::Dgp2, x));
    }
}

#[test]
fn first_stage_mean_is_continuous() {
    assert!((horner(&MU_Z_LEFT, 0.0) - 0.49).abs() < 1e-12);
    assert!((horner(&MU_Z_RIGHT, 0.0) - 0.49).abs() < 1e-12);
    assert!((mu_z(-1e-12) - mu_z(0.0)).abs() < 1e-10);
}

#[test]
fn outcome_jump_matches_true_tau() {
    let spec = |d| DgpSpec::new(d, 500, 5, 1).unwrap();
    let jump = horner(&MU1_DGP1_RIGHT, 0.0) - horner(&MU1_DGP1_LEFT, 0.0);
    assert!((jump - true_tau(&spec(Dgp::Dgp1))).abs() < 1e-12);
    assert!((true_tau(&spec(Dgp::Dgp1)) - 0.04).abs() < 1e-12);
    assert!((true_tau(&spec(Dgp::Dgp2)) - 0.0494).abs() < 1e-12);
    assert!((true_tau(&spec(Dgp::Dgp3)) - 0.0494).abs() < 1e-12);
    // Independent check: one-sided limits of E[Y | X = x] with Z at its mean.
    let cond = |x: f64| {
        let slope = if x < 0.0 { 0.22 } else { 0.28 };
        mu1(Dgp::Dgp2, x) + slope * mu_z(x)
    };
    let eps = 1e-9;
    assert!((cond(eps) - cond(-eps) - 0.0494).abs() < 1e-7);
}

#[test]
fn large_draw_moments() {
    let n = 1_000_000;
    let s = draw_sample(&DgpSpec::new(Dgp::Dgp1, n, 1, 2024).unwrap(), 0);
    let nf = n as f64;
    let mean_x = s.x().iter().sum::<f64>() / nf;
    assert!((mean_x + 1.0 / 3.0).abs() < 0.002, "mean X {mean_x}");
    assert!(s.x().iter().all(|x| (-1.0..=1.0).contains(x)));

    let ey: Vec<f64> = s.x().iter().zip(s.y()).map(|(&x, &y)| y - mu1(Dgp::Dgp1, x)).collect();
    let ez: Vec<f64> = s.x().iter().enumerate().map(|(i, &x)| s.z()[(i, 0)] - mu_z(x)).collect();
    let mean = |v: &[f64]| v.iter().sum::<f64>() / nf;
    let (my, mz) = (mean(&ey), mean(&ez));
    let cov = ey.iter().zip(&ez).map(|(a, b)| (a - my) * (b - mz)).sum::<f64>() / nf;
    let sy = (ey.iter().map(|a| (a - my).powi(2)).sum::<f64>() / nf).sqrt();
    let sz = (ez.iter().map(|b| (b - mz).powi(2)).sum::<f64>() / nf).sqrt();
    let corr = cov / (sy * sz);
    assert!((corr - 0.2692).abs() < 0.003, "corr {corr}");
    assert!((sy - 0.1295).abs() < 0.001, "sd_y {sy}");
    assert!((sz - 0.1353).abs() < 0.001, "sd_z {sz}");
}

#[test]
fn covariate_block_is_ar1() {
    let n = 200_000;
    let s = draw_sample(&DgpSpec::new(Dgp::Dgp3, n, 4, 5).unwrap(), 3);
    assert_eq!(s.covariate_names(), &["z", "w1", "w2", "w3"]);
    let col = |j: usize| s.z().column(j).iter().copied().collect::<Vec<f64>>();
    let moment = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(u, v)| u * v).sum::<f64>() / n as f64;
    let (w1, w2, w3) = (col(1), col(2), col(3));
    assert!((moment(&w1, &w1) - 1.0).abs() < 0.02);
    assert!((moment(&w3, &w3) - 1.0).abs() < 0.02);
    assert!((moment(&w1, &w2) - 0.5).abs() < 0.01);
    assert!((moment(&w2, &w3) - 0.5).abs() < 0.01);
    assert!((moment(&w1, &w3) - 0.25).abs() < 0.01);
    let zc: Vec<f64> = s.x().iter().enumerate().map(|(i, &x)| s.z()[(i, 0)] - mu_z(x)).collect();
    assert!(moment(&zc, &w1).abs() < 0.01);
}

#[test]
fn repeated_draws_are_identical() {
    let spec = DgpSpec::new(Dgp::Dgp2, 300, 12, 99).unwrap();
    let (a, b) = (draw_sample(&spec, 17), draw_sample(&spec, 17));
    assert_eq!(a.x(), b.x());
    assert_eq!(a.y(), b.y());
    assert_eq!(a.z(), b.z());
    assert_ne!(draw_sample(&spec, 18).x(), a.x());
}
