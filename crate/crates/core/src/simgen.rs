//! Seeded generators for the simulation scenarios.
//!
//! Functional coefficients are truncated Fourier series scaled by `c_j`;
//! functional predictors are random cubic splines plus white grid noise,
//! optionally sharing an equicorrelated factor across channels; outcomes are
//! Gaussian, standardized `t_3`, or Bernoulli with an intercept tuned so the
//! average success probability is one half.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Bernoulli, Distribution, StandardNormal, StudentT};
use serde::{Deserialize, Serialize};

use crate::bspline::{trapezoid_weights, uniform_grid, BSplineBasis, GridFunction};
use crate::error::{ensure, HdfpError, Result};
use crate::glm::{sigmoid, Family, FunctionalDataset};

/// Number of Fourier terms in the coefficient curves.
pub const FOURIER_TERMS: usize = 50;
/// Spline size used to synthesize predictor curves.
pub const PREDICTOR_BASIS_SIZE: usize = 10;
/// Standard deviation of the predictor spline coefficients.
pub const PREDICTOR_COEF_SD: f64 = 5.0;
/// Scale of the white noise added to uncorrelated predictors.
pub const UNCORRELATED_NOISE_SD: f64 = 0.5;
/// Noise standard deviation of the correlated surrogate (variance 100).
pub const SURROGATE_NOISE_SD: f64 = 10.0;

const STREAM_Z: u64 = 1;
const STREAM_X: u64 = 2;
const STREAM_Y: u64 = 3;

/// Fourier weight `eta_k`, `k = 1..=50`.
pub fn fourier_weight(k: usize) -> f64 {
    if k <= 4 {
        1.2 - 0.2 * k as f64
    } else {
        0.4 * (k as f64 - 3.0).powi(-4)
    }
}

/// Fourier basis function `phi_k(s)`, `k = 1..=50`.
pub fn fourier_phi(k: usize, s: f64) -> f64 {
    let u = 2.0 * s - 1.0;
    let pi = std::f64::consts::PI;
    if k == 1 {
        1.0
    } else if k % 2 == 0 {
        std::f64::consts::SQRT_2 * ((k / 2) as f64 * pi * u).cos()
    } else {
        std::f64::consts::SQRT_2 * (((k - 1) / 2) as f64 * pi * u).sin()
    }
}

/// `sum_{k=1}^{50} eta_k phi_k(s)`.
pub fn fourier_profile(s: f64) -> f64 {
    (1..=FOURIER_TERMS).map(|k| fourier_weight(k) * fourier_phi(k, s)).sum()
}

/// `beta(s) = c * sum_k eta_k phi_k(s)` on `grid`.
pub fn fourier_beta(c: f64, grid: &[f64]) -> Result<GridFunction> {
    GridFunction::from_fn(grid, |s| if c == 0.0 { 0.0 } else { c * fourier_profile(s) })
}

/// Synthesizes predictor curves on a fixed grid.
#[derive(Debug, Clone)]
pub struct PredictorGenerator {
    grid: Vec<f64>,
    /// `G x 10` basis values.
    basis_values: DMatrix<f64>,
}

impl PredictorGenerator {
    pub fn new(grid: &[f64]) -> Result<Self> {
        let basis = BSplineBasis::with_size(4, PREDICTOR_BASIS_SIZE)?;
        Ok(Self {
            grid: grid.to_vec(),
            basis_values: basis.eval_grid(grid)?,
        })
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    /// `d x G` curves `X_j(s) = sum_k xi_jk B_k(s) + noise_sd * eps_j(s)`, `xi_jk ~ N(0, 25)`.
    pub fn uncorrelated<R: Rng + ?Sized>(&self, d: usize, noise_sd: f64, rng: &mut R) -> DMatrix<f64> {
        self.surrogate(d, 0.0, noise_sd, rng)
    }

    /// Curves whose spline coefficients share a factor:
    /// `xi_jk = 5 (sqrt(w) f_k + sqrt(1 - w) e_jk)`.
    ///
    /// Per channel the draws are ten `e_jk` followed by the grid noise; the
    /// shared `f_k` are drawn last, so `w = 0` reproduces [`Self::uncorrelated`].
    pub fn surrogate<R: Rng + ?Sized>(&self, d: usize, factor_weight: f64, noise_sd: f64, rng: &mut R) -> DMatrix<f64> {
        let g = self.grid.len();
        let mut coef = DMatrix::zeros(PREDICTOR_BASIS_SIZE, d);
        let mut noise = DMatrix::zeros(d, g);
        for j in 0..d {
            for k in 0..PREDICTOR_BASIS_SIZE {
                let e: f64 = rng.sample(StandardNormal);
                coef[(k, j)] = e;
            }
            for col in 0..g {
                let e: f64 = rng.sample(StandardNormal);
                noise[(j, col)] = noise_sd * e;
            }
        }
        let idio = (1.0 - factor_weight).sqrt();
        let shared = factor_weight.sqrt();
        let factor: Vec<f64> = (0..PREDICTOR_BASIS_SIZE).map(|_| rng.sample(StandardNormal)).collect();
        for j in 0..d {
            for k in 0..PREDICTOR_BASIS_SIZE {
                coef[(k, j)] = PREDICTOR_COEF_SD * (shared * factor[k] + idio * coef[(k, j)]);
            }
        }
        (&self.basis_values * coef).transpose() + noise
    }

    /// Factor weight that makes the correlation between channel averages equal
    /// `target_corr` once the grid noise is accounted for.
    pub fn factor_weight_for(&self, target_corr: f64, noise_sd: f64) -> Result<f64> {
        ensure!(
            (0.0..1.0).contains(&target_corr),
            InvalidArgument,
            "target correlation must lie in [0, 1), got {target_corr}"
        );
        let tw = trapezoid_weights(&self.grid);
        let masses = self.basis_values.tr_mul(&DVector::from_vec(tw.clone()));
        let smooth = PREDICTOR_COEF_SD.powi(2) * masses.norm_squared();
        let rough = noise_sd.powi(2) * tw.iter().map(|w| w * w).sum::<f64>();
        let w = target_corr * (smooth + rough) / smooth;
        ensure!(
            w < 1.0,
            InvalidArgument,
            "target correlation {target_corr} is unreachable with noise sd {noise_sd}"
        );
        Ok(w)
    }
}

/// Uncorrelated predictors for one subject, from a seed.
pub fn gen_uncorrelated_x(d: usize, grid: &[f64], seed: u64) -> Result<GridFunction> {
    let gen = PredictorGenerator::new(grid)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    GridFunction::new(grid.to_vec(), gen.uncorrelated(d, UNCORRELATED_NOISE_SD, &mut rng))
}

/// Correlated surrogate predictors for one subject, from a seed.
pub fn gen_correlated_x_surrogate(d: usize, grid: &[f64], target_corr: f64, seed: u64) -> Result<GridFunction> {
    let gen = PredictorGenerator::new(grid)?;
    let w = gen.factor_weight_for(target_corr, SURROGATE_NOISE_SD)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    GridFunction::new(grid.to_vec(), gen.surrogate(d, w, SURROGATE_NOISE_SD, &mut rng))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseModel {
    GaussianNormal,
    GaussianT3,
    Logistic,
}

impl NoiseModel {
    pub fn family(self) -> Family {
        match self {
            NoiseModel::GaussianNormal | NoiseModel::GaussianT3 => Family::Gaussian,
            NoiseModel::Logistic => Family::Logistic,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum PredictorKind {
    Uncorrelated,
    CorrelatedSurrogate { target_corr: f64 },
}

/// Outcomes from the model with linear predictor
/// `alpha0^T Z_i + sum_j ∫ beta_j X_ij` (trapezoid rule on the grid).
///
/// For logistic outcomes the first entry of `alpha0` (the intercept) is
/// replaced by the value that makes the sample mean of `sigmoid(eta_i)` equal
/// 0.5; the realized intercept vector is returned alongside the outcomes.
pub fn gen_outcome<R: Rng + ?Sized>(
    x: &[DMatrix<f64>],
    z: &DMatrix<f64>,
    grid: &[f64],
    betas: &[(usize, GridFunction)],
    alpha0: &[f64],
    noise: NoiseModel,
    rng: &mut R,
) -> Result<(DVector<f64>, Vec<f64>)> {
    let n = x.len();
    ensure!(z.nrows() == n, DimensionMismatch, "z has {} rows for {n} subjects", z.nrows());
    ensure!(z.ncols() == alpha0.len(), DimensionMismatch, "alpha0 has {} entries for q = {}", alpha0.len(), z.ncols());
    let tw = trapezoid_weights(grid);
    let mut functional = vec![0.0; n];
    for (j, beta) in betas {
        ensure!(beta.len() == grid.len(), DimensionMismatch, "beta_{} is not on the data grid", j + 1);
        let weighted: Vec<f64> = beta.values().row(0).iter().zip(&tw).map(|(b, w)| b * w).collect();
        for (i, xi) in x.iter().enumerate() {
            ensure!(*j < xi.nrows(), InvalidArgument, "signal on group {} but d = {}", j + 1, xi.nrows());
            functional[i] += xi.row(*j).iter().zip(&weighted).map(|(a, b)| a * b).sum::<f64>();
        }
    }
    let mut alpha = alpha0.to_vec();
    let base = |alpha: &[f64], i: usize| -> f64 { (0..alpha.len()).map(|c| alpha[c] * z[(i, c)]).sum::<f64>() + functional[i] };
    match noise {
        NoiseModel::GaussianNormal | NoiseModel::GaussianT3 => {
            let t3 = StudentT::new(3.0).map_err(|e| HdfpError::Numerical(e.to_string()))?;
            let y = DVector::from_fn(n, |i, _| {
                let e: f64 = match noise {
                    NoiseModel::GaussianNormal => rng.sample(StandardNormal),
                    _ => t3.sample(rng) / 3f64.sqrt(),
                };
                base(&alpha, i) + e
            });
            Ok((y, alpha))
        }
        NoiseModel::Logistic => {
            ensure!(
                !alpha.is_empty() && (0..n).all(|i| z[(i, 0)] == 1.0),
                InvalidArgument,
                "logistic scenarios need an intercept in the first baseline column"
            );
            alpha[0] = 0.0;
            let rest: Vec<f64> = (0..n).map(|i| base(&alpha, i)).collect();
            let mean_prob = |a: f64| rest.iter().map(|r| sigmoid(a + r)).sum::<f64>() / n as f64;
            let (mut lo, mut hi) = (-1.0, 1.0);
            let mut expand = 0;
            while mean_prob(lo) > 0.5 || mean_prob(hi) < 0.5 {
                lo *= 2.0;
                hi *= 2.0;
                expand += 1;
                ensure!(expand < 60, Numerical, "could not bracket the balancing intercept");
            }
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if mean_prob(mid) < 0.5 {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            let a = 0.5 * (lo + hi);
            ensure!(
                (mean_prob(a) - 0.5).abs() <= 1e-6,
                Numerical,
                "intercept bisection failed: all linear predictors are extreme"
            );
            alpha[0] = a;
            let y = DVector::from_fn(n, |i, _| {
                let p = sigmoid(a + rest[i]);
                let b = Bernoulli::new(p.clamp(0.0, 1.0)).expect("probability in [0, 1]");
                f64::from(b.sample(rng))
            });
            Ok((y, alpha))
        }
    }
}

/// Full description of a simulated data set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub n: usize,
    pub d: usize,
    /// Include the baseline block `Z = [1, N(0,1), Bernoulli(0.5)]`.
    #[serde(default = "default_true")]
    pub baseline: bool,
    pub noise: NoiseModel,
    /// Nonzero `(group, c_j)` pairs, 0-based groups.
    #[serde(default)]
    pub signals: Vec<(usize, f64)>,
    #[serde(default = "default_grid_size")]
    pub grid_size: usize,
    #[serde(default = "default_predictors")]
    pub predictors: PredictorKind,
    /// Baseline effects; defaults to `[5, -1, 2]` (the intercept is re-tuned for logistic outcomes).
    #[serde(default)]
    pub alpha0: Option<Vec<f64>>,
    #[serde(default)]
    pub seed: u64,
}

fn default_true() -> bool {
    true
}

fn default_grid_size() -> usize {
    100
}

fn default_predictors() -> PredictorKind {
    PredictorKind::Uncorrelated
}

impl ScenarioConfig {
    pub fn new(n: usize, d: usize, noise: NoiseModel) -> Self {
        Self {
            n,
            d,
            baseline: true,
            noise,
            signals: Vec::new(),
            grid_size: default_grid_size(),
            predictors: PredictorKind::Uncorrelated,
            alpha0: None,
            seed: 0,
        }
    }

    pub fn q(&self) -> usize {
        if self.baseline {
            3
        } else {
            0
        }
    }

    pub fn alpha0(&self) -> Vec<f64> {
        if !self.baseline {
            return Vec::new();
        }
        self.alpha0.clone().unwrap_or_else(|| vec![5.0, -1.0, 2.0])
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(self.n >= 1, Config, "scenario needs n >= 1");
        ensure!(self.d >= 1, Config, "scenario needs d >= 1");
        ensure!(self.grid_size >= 2, Config, "grid_size must be at least 2");
        for &(j, c) in &self.signals {
            ensure!(j < self.d, Config, "signal on group {} but d = {}", j + 1, self.d);
            ensure!(c.is_finite(), Config, "signal coefficient must be finite");
        }
        ensure!(self.alpha0().len() == self.q(), Config, "alpha0 must have {} entries", self.q());
        if let PredictorKind::CorrelatedSurrogate { target_corr } = self.predictors {
            ensure!((0.0..1.0).contains(&target_corr), Config, "target_corr must lie in [0, 1)");
        }
        if self.noise == NoiseModel::Logistic {
            ensure!(self.baseline, Config, "logistic scenarios need the baseline block (intercept)");
        }
        Ok(())
    }

    /// `d = 200`, `n = 100`, uncorrelated predictors, no baseline block,
    /// `c_1 = c1`, `c_2 = c2`, `c_d = 1`.
    pub fn sparse_testing(n: usize, d: usize, c1: f64, c2: f64, noise: NoiseModel) -> Self {
        let mut s = Self::new(n, d, noise);
        s.baseline = noise == NoiseModel::Logistic;
        s.signals = vec![(0, c1), (1, c2), (d - 1, 1.0)];
        s
    }

    /// Correlated surrogate predictors with baseline effects, `c_d = 2`.
    pub fn correlated_testing(n: usize, d: usize, c1: f64, c2: f64, noise: NoiseModel) -> Self {
        let mut s = Self::new(n, d, noise);
        s.predictors = PredictorKind::CorrelatedSurrogate { target_corr: 0.6 };
        s.signals = vec![(0, c1), (1, c2), (d - 1, 2.0)];
        s
    }

    /// Only the last group carries signal, `c_d = 2`; used for baseline-effect coverage.
    pub fn baseline_coverage(n: usize, d: usize, noise: NoiseModel) -> Self {
        let mut s = Self::new(n, d, noise);
        s.signals = vec![(d - 1, 2.0)];
        s
    }
}

/// Simulated data set together with the truth used to generate it.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub dataset: FunctionalDataset,
    pub alpha0: Vec<f64>,
    pub betas: Vec<(usize, GridFunction)>,
}

impl Scenario {
    /// True coefficient curve of group `j` (zero when it carries no signal).
    pub fn beta(&self, j: usize) -> Option<&GridFunction> {
        self.betas.iter().find(|(g, _)| *g == j).map(|(_, b)| b)
    }
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

pub fn build_scenario(config: &ScenarioConfig) -> Result<Scenario> {
    config.validate()?;
    let grid = uniform_grid(config.grid_size);
    let gen = PredictorGenerator::new(&grid)?;
    let (n, d, q) = (config.n, config.d, config.q());

    let mut zr = stream(config.seed, STREAM_Z);
    let mut z = DMatrix::zeros(n, q);
    if q > 0 {
        let bern = Bernoulli::new(0.5).expect("valid probability");
        for i in 0..n {
            z[(i, 0)] = 1.0;
            z[(i, 1)] = zr.sample(StandardNormal);
            z[(i, 2)] = f64::from(bern.sample(&mut zr));
        }
    }

    let mut xr = stream(config.seed, STREAM_X);
    let x: Vec<DMatrix<f64>> = match config.predictors {
        PredictorKind::Uncorrelated => (0..n).map(|_| gen.uncorrelated(d, UNCORRELATED_NOISE_SD, &mut xr)).collect(),
        PredictorKind::CorrelatedSurrogate { target_corr } => {
            let w = gen.factor_weight_for(target_corr, SURROGATE_NOISE_SD)?;
            (0..n).map(|_| gen.surrogate(d, w, SURROGATE_NOISE_SD, &mut xr)).collect()
        }
    };

    let betas = config
        .signals
        .iter()
        .filter(|(_, c)| *c != 0.0)
        .map(|&(j, c)| Ok((j, fourier_beta(c, &grid)?)))
        .collect::<Result<Vec<_>>>()?;
    let mut yr = stream(config.seed, STREAM_Y);
    let (y, alpha0) = gen_outcome(&x, &z, &grid, &betas, &config.alpha0(), config.noise, &mut yr)?;
    let dataset = FunctionalDataset::new(y, z, grid, x)?;
    Ok(Scenario { dataset, alpha0, betas })
}

/// Seed of replication `rep` derived from `base` (SplitMix64 mixing).
pub fn replication_seed(base: u64, rep: u64) -> u64 {
    splitmix64(base ^ splitmix64(rep.wrapping_add(0x632B_E59B_D9B4_E019)))
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}
