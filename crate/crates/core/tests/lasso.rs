mod common;

use common::{kkt_violation, linear_sample, objective, small_problem};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rdlasso::kernelfit::{build_design, weighted_ols, Design, KernelFamily, KernelSpec};
use rdlasso::lasso::{cv_grid, fit_local_lasso, lambda_max, select_lambda, LambdaRule, PenaltyConfig};

fn penalty(d: &Design, frac: f64, standardize: bool) -> PenaltyConfig {
    let base = PenaltyConfig::partially_penalized(d, 0.0).with_standardize(standardize);
    let lmax = lambda_max(d, &base).unwrap();
    base.with_lambda(frac * lmax)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn converged_fits_satisfy_kkt(seed in any::<u64>(), n in 30usize..120, p in 1usize..8,
                                  frac in 0.01f64..1.5, standardize in any::<bool>()) {
        let d = small_problem(&mut ChaCha8Rng::seed_from_u64(seed), n, p);
        let pen = penalty(&d, frac, standardize);
        let fit = fit_local_lasso(&d, &pen).unwrap();
        prop_assert!(fit.converged);
        let v = kkt_violation(&d, &fit.theta, &fit.penalty_weights, &pen.unpenalized);
        prop_assert!(v < 1e-6, "KKT violation {}", v);
    }

    #[test]
    fn objective_beats_reference_points(seed in any::<u64>(), n in 30usize..120, p in 1usize..8, frac in 0.01f64..1.5) {
        let d = small_problem(&mut ChaCha8Rng::seed_from_u64(seed), n, p);
        let pen = penalty(&d, frac, true);
        let fit = fit_local_lasso(&d, &pen).unwrap();
        let pw = &fit.penalty_weights;
        let at_fit = objective(&d, &fit.theta, pw);
        prop_assert!(at_fit <= objective(&d, &vec![0.0; d.ncols()], pw) + 1e-12);
        let base: Vec<usize> = (0..d.n_base()).collect();
        let ols = weighted_ols(&d.select_columns(&base)).unwrap();
        let mut theta = vec![0.0; d.ncols()];
        theta[..d.n_base()].copy_from_slice(ols.coefficients.as_slice());
        prop_assert!(at_fit <= objective(&d, &theta, pw) + 1e-12);
    }

    #[test]
    fn outcome_shift_only_moves_intercept(seed in any::<u64>(), n in 30usize..120, p in 1usize..6,
                                          frac in 0.05f64..1.0, shift in -50.0f64..50.0) {
        let d = small_problem(&mut ChaCha8Rng::seed_from_u64(seed), n, p);
        let pen = penalty(&d, frac, true);
        let a = fit_local_lasso(&d, &pen).unwrap();
        let shifted = d.with_response(d.response().iter().map(|y| y + shift).collect()).unwrap();
        let b = fit_local_lasso(&shifted, &pen).unwrap();
        prop_assert!((b.theta[0] - a.theta[0] - shift).abs() < 1e-7);
        for j in 1..d.ncols() {
            prop_assert!((b.theta[j] - a.theta[j]).abs() < 1e-7, "column {}: {} vs {}", j, a.theta[j], b.theta[j]);
        }
    }

    #[test]
    fn lambda_above_max_selects_nothing(seed in any::<u64>(), n in 30usize..120, p in 1usize..8,
                                        factor in 1.0f64..20.0, standardize in any::<bool>()) {
        let d = small_problem(&mut ChaCha8Rng::seed_from_u64(seed), n, p);
        let fit = fit_local_lasso(&d, &penalty(&d, factor, standardize)).unwrap();
        prop_assert!(fit.support.iter().all(|&j| j < d.n_base()));
        prop_assert!(fit.theta[d.n_base()..].iter().all(|&t| t == 0.0));
    }
}

/// Objective with the unpenalized block profiled out by weighted least squares.
fn profiled(d: &Design, gamma: &[f64], pw: &[f64]) -> f64 {
    let nb = d.n_base();
    let g = d.g();
    let rows = d.n_loc();
    let mut lhs = DMatrix::zeros(nb, nb);
    let mut rhs = DVector::zeros(nb);
    for r in 0..rows {
        let partial: f64 = d.response()[r] - gamma.iter().enumerate().map(|(j, c)| c * g[(r, nb + j)]).sum::<f64>();
        let w = d.weights()[r];
        for a in 0..nb {
            rhs[a] += w * g[(r, a)] * partial;
            for b in 0..nb {
                lhs[(a, b)] += w * g[(r, a)] * g[(r, b)];
            }
        }
    }
    let base = lhs.lu().solve(&rhs).unwrap();
    let theta: Vec<f64> = base.iter().copied().chain(gamma.iter().copied()).collect();
    objective(d, &theta, pw)
}

#[test]
fn tiny_problem_matches_grid_search() {
    for seed in 0..5 {
        let d = small_problem(&mut ChaCha8Rng::seed_from_u64(seed), 12, 3);
        let pen = PenaltyConfig::partially_penalized(&d, 0.1).with_standardize(false);
        let fit = fit_local_lasso(&d, &pen).unwrap();
        let pw = &fit.penalty_weights;
        let ols = weighted_ols(&d).unwrap();
        let mut center: Vec<f64> = ols.coefficients.as_slice()[d.n_base()..].to_vec();
        let mut half = center.iter().fold(0.0f64, |m, c| m.max(c.abs())) * 1.5 + 0.5;
        let steps = 40;
        let mut best = f64::INFINITY;
        for _ in 0..8 {
            let step = 2.0 * half / steps as f64;
            let mut arg = center.clone();
            for i in 0..=steps {
                for j in 0..=steps {
                    for k in 0..=steps {
                        let gamma = [
                            center[0] - half + i as f64 * step,
                            center[1] - half + j as f64 * step,
                            center[2] - half + k as f64 * step,
                        ];
                        let v = profiled(&d, &gamma, pw);
                        if v < best {
                            best = v;
                            arg = gamma.to_vec();
                        }
                    }
                }
            }
            center = arg;
            half = 2.0 * step;
        }
        let at_fit = objective(&d, &fit.theta, pw);
        assert!(at_fit <= best + 1e-10, "seed {seed}: fit {at_fit} above grid {best}");
        assert!(best - at_fit < 1e-4, "seed {seed}: grid {best} vs fit {at_fit}");
    }
}

#[test]
fn l1_error_shrinks_with_local_sample_size() {
    let p = 20;
    let mut gamma = vec![0.0; p];
    gamma[0] = 1.0;
    gamma[4] = -0.8;
    gamma[9] = 0.6;
    let kernel = KernelSpec::new(KernelFamily::Uniform, 1.0).unwrap();
    let medians: Vec<f64> = [100usize, 400, 1600]
        .iter()
        .map(|&n| {
            let mut errors: Vec<f64> = (0..200)
                .map(|seed| {
                    let mut rng = ChaCha8Rng::seed_from_u64(50_000 + seed);
                    let s = linear_sample(&mut rng, n, p, 0.5, &gamma, 1.0);
                    let cols: Vec<usize> = (0..p).collect();
                    let d = build_design(&s, &kernel, &cols).unwrap();
                    let lambda = 0.5 * ((p as f64).ln() / d.scale()).sqrt();
                    let fit = fit_local_lasso(&d, &PenaltyConfig::partially_penalized(&d, lambda)).unwrap();
                    let truth: Vec<f64> = [0.0, 0.5, 1.0, 0.0].into_iter().chain(gamma.iter().copied()).collect();
                    fit.theta.iter().zip(&truth).map(|(a, b)| (a - b).abs()).sum()
                })
                .collect();
            errors.sort_by(|a, b| a.partial_cmp(b).unwrap());
            (errors[99] + errors[100]) / 2.0
        })
        .collect();
    assert!(medians[0] > medians[1] && medians[1] > medians[2], "medians {medians:?}");
}

#[test]
fn cross_validation_on_noise_prefers_large_lambda() {
    let reps = 50;
    let kernel = KernelSpec::new(KernelFamily::Triangular, 1.0).unwrap();
    let upper = (0..reps)
        .filter(|&seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(80_000 + seed);
            let s = linear_sample(&mut rng, 300, 5, 0.3, &[0.0; 5], 0.5);
            let d = build_design(&s, &kernel, &[0, 1, 2, 3, 4]).unwrap();
            let t = PenaltyConfig::partially_penalized(&d, 0.0).with_rule(LambdaRule::CrossValidation);
            let grid = cv_grid(&d, &t).unwrap();
            let chosen = select_lambda(&d, &t).unwrap().lambda;
            let idx = grid.iter().position(|&g| g == chosen).expect("CV returns a grid point");
            idx < grid.len() / 2
        })
        .count();
    assert!(upper as f64 >= 0.8 * reps as f64, "{upper} of {reps} in the upper half");
}
