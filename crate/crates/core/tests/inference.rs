mod support;

use hdfp::bspline::uniform_grid;
use hdfp::cprsm::fit_design;
use hdfp::inference::{assemble_sandwich, ci_alpha, ci_beta_pointwise, wald_test, wald_test_with, DEFAULT_LEVELS};
use hdfp::simgen::{build_scenario, fourier_profile, replication_seed};
use hdfp::{
    run_experiment, BSplineBasis, CprsmConfig, DesignMatrix, ExperimentConfig, Family, FitResult, Hypothesis, MiddleMatrix, NoiseModel,
    SandwichCorrection, SandwichCovariance, ScadPenalty, ScenarioConfig, ThetaVector, TuningMode,
};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use support::ks_uniform;

fn random_design(seed: u64, n: usize, q: usize, d: usize, nb: usize) -> DesignMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut w = DMatrix::from_fn(n, q + d * nb, |_, _| rng.random_range(-1.0..1.0));
    if q > 0 {
        w.column_mut(0).fill(1.0);
    }
    DesignMatrix::from_parts(w, q, d, nb).unwrap()
}

/// Parameter with groups in `zero` set to zero and the rest drawn at random.
fn sparse_theta(seed: u64, q: usize, d: usize, nb: usize, zero: &[usize]) -> ThetaVector {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut t = ThetaVector::from_vector(q, d, nb, DVector::from_fn(q + d * nb, |_, _| rng.random_range(-0.5..0.5))).unwrap();
    for &j in zero {
        t.group_mut(j).fill(0.0);
    }
    t
}

fn fit_at(theta: ThetaVector) -> FitResult {
    let active_set = (0..theta.d()).filter(|&j| theta.group_norm(j) > 0.0).collect();
    FitResult {
        gamma_hat: theta.gamma(),
        theta_hat: theta,
        active_set,
        iterations: 1,
        converged: true,
        final_delta: 0.0,
        objective: 0.0,
        primal_residual: 0.0,
    }
}

fn logistic_outcomes(w: &DesignMatrix, theta: &ThetaVector, seed: u64) -> DVector<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    w.linear_predictor(theta).map(|e| f64::from(u8::from(rng.random_bool(1.0 / (1.0 + (-e).exp())))))
}

/// `Q^{-1} Sigma Q^{-1}` from explicit sums over subjects and a dense inverse.
fn explicit_psi(w: &DesignMatrix, y: &DVector<f64>, theta: &ThetaVector, cols: &[usize], dof: bool) -> (DMatrix<f64>, DMatrix<f64>) {
    let n = w.n();
    let p = cols.len();
    let eta = w.linear_predictor(theta);
    let (mut q, mut s) = (DMatrix::zeros(p, p), DMatrix::zeros(p, p));
    for i in 0..n {
        let row = DVector::from_iterator(p, cols.iter().map(|&c| w.matrix()[(i, c)]));
        let mu = 1.0 / (1.0 + (-eta[i]).exp());
        q += mu * (1.0 - mu) * &row * row.transpose();
        s += (mu - y[i]).powi(2) * &row * row.transpose();
    }
    q /= n as f64;
    s /= n as f64;
    if dof {
        s *= n as f64 / (n - p) as f64;
    }
    let qi = q.try_inverse().unwrap();
    (&qi * s * &qi, qi)
}

fn close(a: &DMatrix<f64>, b: &DMatrix<f64>, tol: f64) -> bool {
    (a - b).amax() <= tol * b.amax().max(1.0)
}

#[test]
fn equal_residuals_give_scaled_inverse_information() {
    let (q, d, nb) = (2, 3, 4);
    let w = random_design(1, 60, q, d, nb);
    let theta = sparse_theta(2, q, d, nb, &[2]);
    let sigma = 0.7;
    let signs = DVector::from_fn(60, |i, _| if i % 3 == 0 { -sigma } else { sigma });
    let y = w.linear_predictor(&theta) + signs;
    let cov = SandwichCovariance::assemble_with(&w, &y, Family::Gaussian, &theta, &[0], SandwichCorrection::None).unwrap();
    assert!(close(&cov.sigma_hat, &(sigma * sigma * &cov.q_hat), 1e-12));
    let inv = cov.q_hat.clone().try_inverse().unwrap();
    assert!(close(&cov.psi_hat, &(sigma * sigma * inv), 1e-10));
}

#[test]
fn sandwich_matches_explicit_inverse() {
    let (q, d, nb, n) = (2, 4, 3, 50);
    let w = random_design(3, n, q, d, nb);
    let theta = sparse_theta(4, q, d, nb, &[1, 3]);
    let y = logistic_outcomes(&w, &theta, 5);
    // Leading group 3 is zero but tested, group 0 and 2 are active.
    let cols: Vec<usize> = (0..q).chain([3, 0, 2].iter().flat_map(|&j| w.group_range(j))).collect();
    for (correction, dof) in [(SandwichCorrection::None, false), (SandwichCorrection::DegreesOfFreedom, true)] {
        let cov = SandwichCovariance::assemble_with(&w, &y, Family::Logistic, &theta, &[3], correction).unwrap();
        assert_eq!(cov.groups(), &[3, 0, 2]);
        let (psi, _) = explicit_psi(&w, &y, &theta, &cols, dof);
        assert!(close(&cov.psi_hat, &psi, 1e-8), "{correction:?}");
        assert!(close(&cov.psi_hat, &cov.psi_hat.transpose(), 1e-14));
        assert!(cov.psi_hat.clone().symmetric_eigenvalues().min() > -1e-12);
    }
}

#[test]
fn single_tested_group_without_support_has_dimension_q_plus_n() {
    let (q, d, nb) = (3, 5, 6);
    let w = random_design(6, 80, q, d, nb);
    let theta = sparse_theta(7, q, d, nb, &[0, 1, 2, 3, 4]);
    let y = w.linear_predictor(&theta) + DVector::from_fn(80, |i, _| (i as f64).sin());
    let cov = assemble_sandwich(&w, &y, Family::Gaussian, &fit_at(theta), &Hypothesis::zero(vec![2]).unwrap()).unwrap();
    assert_eq!(cov.dim(), q + nb);
    assert_eq!(cov.psi_hat.shape(), (q + nb, q + nb));
}

#[test]
fn statistic_vanishes_on_exactly_satisfied_constraints() {
    let (q, d, nb, n) = (2, 3, 5, 100);
    let basis = BSplineBasis::with_size(4, nb).unwrap();
    let w = random_design(8, n, q, d, nb);
    let grid = uniform_grid(201);

    // C = [1, -1]: theta_0 - theta_2 equals the scaled projection of t.
    let target = hdfp::GridFunction::from_fn(&grid, |s| (3.0 * s).sin()).unwrap();
    let coef = basis.project(&target).unwrap();
    let mut theta = sparse_theta(9, q, d, nb, &[]);
    let base: Vec<f64> = theta.group(2).to_vec();
    let scale = (nb as f64).sqrt();
    for (k, v) in theta.group_mut(0).iter_mut().enumerate() {
        *v = base[k] + coef[(k, 0)] / scale;
    }
    let y = w.linear_predictor(&theta) + DVector::from_fn(n, |i, _| ((i * 7) % 5) as f64 - 2.0);
    let h = Hypothesis::new(vec![0, 2], DMatrix::from_row_slice(1, 2, &[1.0, -1.0]), Some(target)).unwrap();
    let fit = fit_at(theta);
    let cov = assemble_sandwich(&w, &y, Family::Gaussian, &fit, &h).unwrap();
    let t = wald_test(&fit, &cov, &h, &basis).unwrap();
    assert!(t.statistic < 1e-12, "T = {}", t.statistic);
    assert!(t.p_value > 1.0 - 1e-9);
    assert_eq!(t.df, nb);

    // C = I, t = 0 and zero tested blocks.
    let theta = sparse_theta(10, q, d, nb, &[0, 1]);
    let h = Hypothesis::zero(vec![0, 1]).unwrap();
    let fit = fit_at(theta);
    let cov = assemble_sandwich(&w, &y, Family::Gaussian, &fit, &h).unwrap();
    let t = wald_test(&fit, &cov, &h, &basis).unwrap();
    assert_eq!(t.statistic, 0.0);
    assert_eq!(t.p_value, 1.0);
    assert_eq!(t.df, 2 * nb);
    assert!(t.reject_at.iter().all(|&(_, r)| !r));
}

#[test]
fn statistic_is_invariant_to_reparameterizing_the_constraint() {
    let (q, d, nb, n) = (1, 4, 4, 120);
    let basis = BSplineBasis::with_size(4, nb).unwrap();
    let w = random_design(11, n, q, d, nb);
    let theta = sparse_theta(12, q, d, nb, &[3]);
    let y = logistic_outcomes(&w, &theta, 13);
    let grid = uniform_grid(101);
    let target = hdfp::GridFunction::from_fn(&grid, |s| 0.2 * s).unwrap();
    let target = hdfp::GridFunction::new(grid.clone(), DMatrix::from_fn(2, grid.len(), |r, g| target.values()[(0, g)] * (r + 1) as f64)).unwrap();
    let c = DMatrix::from_row_slice(2, 3, &[1.0, -1.0, 0.0, 0.5, 0.0, 2.0]);
    let h = Hypothesis::new(vec![0, 1, 2], c, Some(target)).unwrap();
    let fit = fit_at(theta);
    let cov = assemble_sandwich(&w, &y, Family::Logistic, &fit, &h).unwrap();
    let t = wald_test(&fit, &cov, &h, &basis).unwrap();
    assert!(t.statistic > 0.0);
    for g in [DMatrix::from_row_slice(2, 2, &[2.0, 1.0, -1.0, 3.0]), DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0])] {
        let tg = wald_test(&fit, &cov, &h.transformed(&g).unwrap(), &basis).unwrap();
        assert!((tg.statistic - t.statistic).abs() < 1e-8 * t.statistic.max(1.0));
    }
    // The literal middle matrix is a different quadratic form.
    let lit = wald_test_with(&fit, &cov, &h, &basis, MiddleMatrix::Literal, &DEFAULT_LEVELS).unwrap();
    assert!(lit.statistic >= 0.0);
}

#[test]
fn alpha_intervals_use_the_sandwich_variance() {
    let (q, d, nb, n) = (3, 3, 4, 50);
    let w = random_design(14, n, q, d, nb);
    let theta = sparse_theta(15, q, d, nb, &[1]);
    let y = logistic_outcomes(&w, &theta, 16);
    let fit = fit_at(theta.clone());
    let cov = SandwichCovariance::assemble(&w, &y, Family::Logistic, &theta, &[]).unwrap();
    let cols: Vec<usize> = (0..q).chain([0, 2].iter().flat_map(|&j| w.group_range(j))).collect();
    let (psi, _) = explicit_psi(&w, &y, &theta, &cols, true);
    let ci = ci_alpha(&fit, &cov, 0.95).unwrap();
    for (k, iv) in ci.iter().enumerate() {
        let half = 1.959963984540054 * (psi[(k, k)] / n as f64).sqrt();
        assert!((iv.upper - iv.estimate - half).abs() < 1e-8 * half.max(1.0));
        assert!((iv.estimate - iv.lower - half).abs() < 1e-8 * half.max(1.0));
        assert_eq!(iv.estimate, theta.alpha()[k]);
    }
    for iv in ci_alpha(&fit, &cov, 1e-12).unwrap() {
        assert!((iv.upper - iv.lower).abs() < 1e-10);
    }
    assert!(ci_alpha(&fit, &cov, 1.0).is_err());
}

#[test]
fn pointwise_band_formula_and_center() {
    let (q, d, nb, n) = (1, 3, 6, 90);
    let basis = BSplineBasis::with_size(4, nb).unwrap();
    let w = random_design(17, n, q, d, nb);
    let theta = sparse_theta(18, q, d, nb, &[2]);
    let y = w.linear_predictor(&theta) + DVector::from_fn(n, |i, _| ((i * 13) % 7) as f64 / 3.0 - 1.0);
    let fit = fit_at(theta);
    let mut cov = SandwichCovariance::assemble(&w, &y, Family::Gaussian, &fit.theta_hat, &[1]).unwrap();
    let grid: Vec<f64> = (0..=10).map(|i| i as f64 / 10.0).collect();

    let band = ci_beta_pointwise(&fit, &cov, &basis, 0, &grid, 0.95).unwrap();
    assert!((band.center[0] - fit.gamma_hat[(0, 0)]).abs() < 1e-14);
    let off = cov.group_offset(0).unwrap();
    let block = cov.psi_hat.view((off, off), (nb, nb)).clone_owned();
    for (g, &s) in grid.iter().enumerate() {
        let b = basis.eval(s).unwrap();
        let half = 1.959963984540054 * (nb as f64 * (b.transpose() * &block * &b)[(0, 0)] / n as f64).sqrt();
        assert!((band.upper[g] - band.center[g] - half).abs() < 1e-10);
    }

    cov.psi_hat = DMatrix::identity(cov.dim(), cov.dim());
    let band = ci_beta_pointwise(&fit, &cov, &basis, 1, &grid, 0.95).unwrap();
    for (g, &s) in grid.iter().enumerate() {
        let half = 1.959963984540054 * (nb as f64 * basis.eval(s).unwrap().norm_squared() / n as f64).sqrt();
        assert!((band.upper[g] - band.center[g] - half).abs() < 1e-12);
    }
    // Group 2 is neither tested nor active.
    assert!(ci_beta_pointwise(&fit, &cov, &basis, 2, &grid, 0.95).is_err());
}

#[test]
fn pointwise_band_coverage() {
    let mut config = ScenarioConfig::sparse_testing(500, 20, 0.4, 0.0, NoiseModel::GaussianNormal);
    config.grid_size = 100;
    let basis = BSplineBasis::with_size(4, 8).unwrap();
    let penalty = ScadPenalty::new(0.5, 3.7).unwrap();
    let points: Vec<f64> = (0..20).map(|i| (i as f64 + 0.5) / 20.0).collect();
    let truth: Vec<f64> = points.iter().map(|&s| 0.4 * fourier_profile(s)).collect();
    let h = Hypothesis::zero(vec![0]).unwrap();
    let reps = 300;
    let mut hits = vec![0usize; points.len()];
    for r in 0..reps {
        let s = build_scenario(&ScenarioConfig {
            seed: replication_seed(5150, r),
            ..config.clone()
        })
        .unwrap();
        let design = DesignMatrix::build(&s.dataset, &basis).unwrap();
        let fit = fit_design(&design, s.dataset.y(), Family::Gaussian, &penalty, &[0], &CprsmConfig::default(), None).unwrap();
        let cov = assemble_sandwich(&design, s.dataset.y(), Family::Gaussian, &fit, &h).unwrap();
        let band = ci_beta_pointwise(&fit, &cov, &basis, 0, &points, 0.95).unwrap();
        for (g, t) in truth.iter().enumerate() {
            hits[g] += usize::from(band.lower[g] <= *t && *t <= band.upper[g]);
        }
    }
    let coverage: Vec<f64> = hits.iter().map(|&h| h as f64 / reps as f64).collect();
    assert!(coverage.iter().all(|c| (0.90..=0.99).contains(c)), "{coverage:?}");
}

fn null_experiment(n: usize, d: usize, n_basis: usize, lambda: f64) -> ExperimentConfig {
    ExperimentConfig::new(
        ScenarioConfig::sparse_testing(n, d, 0.0, 0.0, NoiseModel::GaussianNormal),
        vec![0],
        TuningMode::Fixed { n_basis, lambda },
    )
}

#[test]
fn null_p_values_are_close_to_uniform() {
    let res = run_experiment(&null_experiment(400, 20, 8, 0.5), 500, 404, None).unwrap();
    let p: Vec<f64> = res.records.iter().filter_map(|r| r.p_value).collect();
    assert_eq!(p.len(), 500);
    // 1% critical value of the one-sample KS distance at n = 500 is 1.63 / sqrt(500).
    let ks = ks_uniform(&p);
    assert!(ks < 1.63 / 500f64.sqrt(), "KS distance {ks}");
}

#[test]
#[ignore = "documents the small-sample gap of the d = 50 cell; see the tuning notes"]
fn null_size_reduced_table_one_cell() {
    let res = run_experiment(&null_experiment(100, 50, 8, 0.5), 500, 2024, None).unwrap();
    let size = res.summary.rate_at(0.05).unwrap();
    assert!((size - 0.045).abs() <= 0.03, "size {size}");
}

#[test]
fn equal_coefficients_on_exchangeable_channels_are_not_rejected() {
    // Channels 1 and 2 share the predictor distribution and beta_1 = beta_2, so
    // C = [1, -1] states a true null. Literal copies X_2 = X_1 would make the
    // contrast non-estimable.
    let mut config = ScenarioConfig::new(300, 6, NoiseModel::GaussianNormal);
    config.signals = vec![(0, 0.5), (1, 0.5)];
    let mut experiment = ExperimentConfig::new(config, vec![0, 1], TuningMode::Fixed { n_basis: 6, lambda: 0.5 });
    experiment.contrast = Some(vec![vec![1.0, -1.0]]);
    let res = run_experiment(&experiment, 200, 77, None).unwrap();
    assert_eq!(res.summary.failures, 0);
    let kept = 1.0 - res.summary.rate_at(0.05).unwrap();
    assert!(kept >= 0.9, "non-rejection rate {kept}");
}
