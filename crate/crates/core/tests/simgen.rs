mod support;

use hdfp::bspline::{trapezoid_weights, uniform_grid};
use hdfp::simgen::{
    build_scenario, fourier_beta, fourier_weight, gen_correlated_x_surrogate, gen_outcome, gen_uncorrelated_x, replication_seed, PredictorGenerator,
    PREDICTOR_BASIS_SIZE,
};
use hdfp::{BSplineBasis, GridFunction, NoiseModel, ScenarioConfig};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use support::correlation;

fn integral(row: impl Iterator<Item = f64>, weights: &[f64]) -> f64 {
    row.zip(weights).map(|(v, w)| v * w).sum()
}

/// Channel averages `∫ X_j` for one draw.
fn channel_averages(x: &GridFunction) -> Vec<f64> {
    let w = trapezoid_weights(x.grid());
    (0..x.channels()).map(|j| integral(x.values().row(j).iter().copied(), &w)).collect()
}

fn mean_pairwise_correlation(draws: &[Vec<f64>]) -> f64 {
    let d = draws[0].len();
    let mut total = 0.0;
    let mut pairs = 0;
    for a in 0..d {
        for b in a + 1..d {
            let xa: Vec<f64> = draws.iter().map(|v| v[a]).collect();
            let xb: Vec<f64> = draws.iter().map(|v| v[b]).collect();
            total += correlation(&xa, &xb);
            pairs += 1;
        }
    }
    total / pairs as f64
}

#[test]
fn fourier_weights_follow_the_printed_formula() {
    assert!((fourier_weight(1) - 1.0).abs() < 1e-15);
    assert!((fourier_weight(4) - 0.4).abs() < 1e-15);
    assert!((fourier_weight(5) - 0.025).abs() < 1e-15);
    assert!((fourier_weight(50) - 0.4 * 47f64.powi(-4)).abs() < 1e-20);
}

#[test]
fn fourier_beta_matches_a_direct_sum() {
    let grid = uniform_grid(37);
    let beta = fourier_beta(1.7, &grid).unwrap();
    let pi = std::f64::consts::PI;
    for (i, &s) in grid.iter().enumerate() {
        let mut sum = 1.0;
        for k in 1..=25 {
            let even = 1.2 - 0.2 * (2 * k) as f64;
            let eta_even = if 2 * k <= 4 { even } else { 0.4 * ((2 * k) as f64 - 3.0).powi(-4) };
            sum += eta_even * 2f64.sqrt() * (k as f64 * pi * (2.0 * s - 1.0)).cos();
            if k >= 2 {
                let m = 2 * k - 1;
                let eta_odd = if m <= 4 { 1.2 - 0.2 * m as f64 } else { 0.4 * (m as f64 - 3.0).powi(-4) };
                sum += eta_odd * 2f64.sqrt() * ((k - 1) as f64 * pi * (2.0 * s - 1.0)).sin();
            }
        }
        assert!((beta.values()[(0, i)] - 1.7 * sum).abs() < 1e-12);
    }
}

#[test]
fn squared_norm_of_beta_is_grid_independent() {
    // Orthonormal basis: ∫ beta^2 = c^2 sum eta_k^2.
    let exact: f64 = (1..=50).map(|k| fourier_weight(k).powi(2)).sum();
    let norm = |g: usize| {
        let grid = uniform_grid(g);
        let b = fourier_beta(1.0, &grid).unwrap();
        integral(b.values().row(0).iter().map(|v| v * v), &trapezoid_weights(&grid))
    };
    let (coarse, fine) = (norm(100), norm(10_000));
    assert!((coarse - fine).abs() < 1e-3);
    assert!((fine - exact).abs() < 1e-6);
}

#[test]
fn noise_free_channels_are_exact_splines() {
    // The moment integrals carry an O(h^2) interpolation error; with xi of scale 5 it
    // is 5e-8 at 100,001 points, so the grid is four times denser.
    let grid = uniform_grid(400_001);
    let gen = PredictorGenerator::new(&grid).unwrap();
    let d = 2;
    let x = gen.uncorrelated(d, 0.0, &mut ChaCha8Rng::seed_from_u64(3));

    // Same draw order as the generator: ten coefficients, then one normal per grid point.
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut xi = DMatrix::zeros(PREDICTOR_BASIS_SIZE, d);
    for j in 0..d {
        for k in 0..PREDICTOR_BASIS_SIZE {
            xi[(k, j)] = 5.0 * rng.sample::<f64, _>(StandardNormal);
        }
        for _ in 0..grid.len() {
            let _: f64 = rng.sample(StandardNormal);
        }
    }
    let basis = BSplineBasis::with_size(4, PREDICTOR_BASIS_SIZE).unwrap();
    let coef = basis.project(&GridFunction::new(grid, x).unwrap()).unwrap();
    let err = (coef - xi).amax();
    assert!(err < 1e-8, "coefficient error {err}");
}

#[test]
fn uncorrelated_channels_are_independent() {
    let grid = uniform_grid(100);
    let draws: Vec<Vec<f64>> = (0..2000).map(|s| channel_averages(&gen_uncorrelated_x(3, &grid, replication_seed(5, s)).unwrap())).collect();
    for (a, b) in [(0, 1), (0, 2), (1, 2)] {
        let xa: Vec<f64> = draws.iter().map(|v| v[a]).collect();
        let xb: Vec<f64> = draws.iter().map(|v| v[b]).collect();
        assert!(correlation(&xa, &xb).abs() < 0.1);
    }
}

#[test]
fn surrogate_reaches_the_target_correlation() {
    let grid = uniform_grid(100);
    let draws: Vec<Vec<f64>> = (0..500)
        .map(|s| channel_averages(&gen_correlated_x_surrogate(6, &grid, 0.6, replication_seed(6, s)).unwrap()))
        .collect();
    let r = mean_pairwise_correlation(&draws);
    assert!((0.5..=0.7).contains(&r), "mean pairwise correlation {r}");
    assert!(gen_correlated_x_surrogate(2, &grid, 1.0, 0).is_err());
}

#[test]
fn shared_factor_near_one_gives_near_perfect_correlation() {
    let grid = uniform_grid(100);
    let gen = PredictorGenerator::new(&grid).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let draws: Vec<Vec<f64>> = (0..500)
        .map(|_| channel_averages(&GridFunction::new(grid.clone(), gen.surrogate(2, 0.999, 0.5, &mut rng)).unwrap()))
        .collect();
    let r = mean_pairwise_correlation(&draws);
    assert!(r > 0.95, "correlation {r}");
}

fn pure_noise(n: usize, noise: NoiseModel, seed: u64) -> nalgebra::DVector<f64> {
    let grid = uniform_grid(5);
    let x = vec![DMatrix::zeros(1, grid.len()); n];
    let z = DMatrix::zeros(n, 0);
    gen_outcome(&x, &z, &grid, &[], &[], noise, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap().0
}

#[test]
fn gaussian_errors_have_unit_variance() {
    let y = pure_noise(10_000, NoiseModel::GaussianNormal, 12);
    assert!((0.9..=1.1).contains(&y.variance()), "variance {}", y.variance());
}

#[test]
fn t3_errors_are_scaled_by_one_over_root_three() {
    // The t_3 CDF at 1 is 1/2 + (sqrt(3)/4 + pi/6) / pi, so P(|T_3| < 1) = 2 F(1) - 1.
    let f1 = 0.5 + (3f64.sqrt() / 4.0 + std::f64::consts::PI / 6.0) / std::f64::consts::PI;
    let target = 2.0 * f1 - 1.0;
    let y = pure_noise(100_000, NoiseModel::GaussianT3, 13);
    let cut = 1.0 / 3f64.sqrt();
    let frac = y.iter().filter(|v| v.abs() < cut).count() as f64 / y.len() as f64;
    assert!((frac - target).abs() < 0.006, "fraction {frac} vs {target}");
}

#[test]
fn logistic_intercept_balances_success_probability() {
    let mut cfg = ScenarioConfig::new(1000, 4, NoiseModel::Logistic);
    cfg.signals = vec![(0, 1.0), (3, 0.5)];
    cfg.seed = 17;
    let sc = build_scenario(&cfg).unwrap();
    let data = &sc.dataset;
    let w = trapezoid_weights(data.grid());
    let mean_prob = (0..data.n())
        .map(|i| {
            let mut eta: f64 = (0..3).map(|c| sc.alpha0[c] * data.z()[(i, c)]).sum();
            for (j, beta) in &sc.betas {
                eta += integral(data.x()[i].row(*j).iter().zip(beta.values().row(0).iter()).map(|(a, b)| a * b), &w);
            }
            1.0 / (1.0 + (-eta).exp())
        })
        .sum::<f64>()
        / data.n() as f64;
    assert!((mean_prob - 0.5).abs() < 1e-6);
    assert_eq!(&sc.alpha0[1..], &[-1.0, 2.0]);
    let success = data.y().mean();
    assert!((0.4..=0.6).contains(&success), "success fraction {success}");
}

#[test]
fn scenarios_are_deterministic_per_seed() {
    let mut cfg = ScenarioConfig::correlated_testing(30, 6, 0.4, 0.0, NoiseModel::GaussianT3);
    cfg.seed = 4;
    let a = build_scenario(&cfg).unwrap();
    assert_eq!(a.dataset, build_scenario(&cfg).unwrap().dataset);
    cfg.seed = 5;
    assert_ne!(a.dataset, build_scenario(&cfg).unwrap().dataset);
    assert!(a.beta(1).is_none() && a.beta(5).is_some());
}
