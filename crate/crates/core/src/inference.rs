//! Sandwich covariance, Wald tests of `C beta_M(s) = t(s)`, and confidence
//! intervals for the baseline effects and pointwise functional effects.
//!
//! Inference works on the block of `theta` made of the baseline effects, the
//! tested groups `M` (in hypothesis order) and the remaining active groups `S`
//! (ascending). All group indices are 0-based.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::bspline::{BSplineBasis, GridFunction};
use crate::cprsm::FitResult;
use crate::distributions::{chi2_quantile, chi2_sf, normal_quantile};
use crate::error::{ensure, HdfpError, Result};
use crate::glm::{DesignMatrix, Family, ThetaVector};
use crate::linalg;

const MAX_CONDITION: f64 = 1e12;

/// Significance levels reported by default.
pub const DEFAULT_LEVELS: [f64; 3] = [0.01, 0.05, 0.10];

/// `H0: C beta_M(s) = t(s)` for an ordered set `M` of `m` groups and an
/// `r x m` matrix `C` of full row rank.
#[derive(Debug, Clone, PartialEq)]
pub struct Hypothesis {
    test_set: Vec<usize>,
    c: DMatrix<f64>,
    target: Option<GridFunction>,
}

impl Hypothesis {
    /// `target = None` means `t(s) = 0`.
    pub fn new(test_set: Vec<usize>, c: DMatrix<f64>, target: Option<GridFunction>) -> Result<Self> {
        ensure!(!test_set.is_empty(), InvalidArgument, "the tested set M is empty");
        let mut seen = test_set.clone();
        seen.sort_unstable();
        seen.dedup();
        ensure!(seen.len() == test_set.len(), InvalidArgument, "the tested set M has repeated groups");
        let (r, m) = c.shape();
        ensure!(m == test_set.len(), DimensionMismatch, "C has {m} columns for {} tested groups", test_set.len());
        ensure!(r >= 1 && r <= m, InvalidArgument, "C must have between 1 and {m} rows, got {r}");
        let rank = c.clone().svd(false, false).rank(1e-10 * c.amax().max(1.0));
        ensure!(rank == r, InvalidArgument, "C must have full row rank (rank {rank} < {r})");
        if let Some(t) = &target {
            ensure!(t.channels() == r, DimensionMismatch, "target has {} channels, C has {r} rows", t.channels());
        }
        Ok(Self { test_set, c, target })
    }

    /// `H0: beta_j(s) = 0` for every `j` in `groups`.
    pub fn zero(groups: Vec<usize>) -> Result<Self> {
        let m = groups.len();
        Self::new(groups, DMatrix::identity(m, m), None)
    }

    pub fn test_set(&self) -> &[usize] {
        &self.test_set
    }

    pub fn c_matrix(&self) -> &DMatrix<f64> {
        &self.c
    }

    pub fn target(&self) -> Option<&GridFunction> {
        self.target.as_ref()
    }

    pub fn rows(&self) -> usize {
        self.c.nrows()
    }

    /// Same hypothesis with `(C, t)` replaced by `(G C, G t)`.
    pub fn transformed(&self, g: &DMatrix<f64>) -> Result<Self> {
        let c = g * &self.c;
        let target = match &self.target {
            None => None,
            Some(t) => Some(GridFunction::new(t.grid().to_vec(), g * t.values())?),
        };
        Self::new(self.test_set.clone(), c, target)
    }
}

/// Form of the middle matrix in the quadratic form.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MiddleMatrix {
    /// `(A Psi A^T)^{-1}`: inverse covariance of `sqrt(n) A theta`.
    #[default]
    Wald,
    /// `A Psi^{-1} A^T`.
    Literal,
}

/// Finite-sample adjustment of the middle factor `Sigma` of the sandwich.
///
/// All variants agree asymptotically. The uncorrected form is anti-conservative
/// when the restricted block is a sizable fraction of `n`, so the default
/// rescales by the residual degrees of freedom.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SandwichCorrection {
    /// `Sigma = n^{-1} sum (psi'(eta_i) - y_i)^2 w_i w_i^T`.
    None,
    /// `Sigma` scaled by `n / (n - p)`, `p` the restricted block size.
    #[default]
    DegreesOfFreedom,
    /// Each score term divided by `1 - h_i`, `h_i` the leverage of subject `i`
    /// in the restricted weighted design; unbiased for homoskedastic errors.
    Leverage,
    /// Each score term divided by `(1 - h_i)^2` (jackknife form).
    Jackknife,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TestResult {
    pub statistic: f64,
    pub df: usize,
    pub p_value: f64,
    /// `(level, reject)` pairs, rejecting when `T` exceeds the `1 - level` chi-square quantile.
    pub reject_at: Vec<(f64, bool)>,
    pub active_set: Vec<usize>,
}

impl TestResult {
    pub fn rejects(&self, level: f64) -> Option<bool> {
        self.reject_at.iter().find(|(l, _)| (*l - level).abs() < 1e-12).map(|&(_, r)| r)
    }
}

/// `Q`, `Sigma` and `Psi = Q^{-1} Sigma Q^{-1}` restricted to the baseline
/// block and the groups in [`SandwichCovariance::groups`].
#[derive(Debug, Clone, PartialEq)]
pub struct SandwichCovariance {
    pub q_hat: DMatrix<f64>,
    pub sigma_hat: DMatrix<f64>,
    pub psi_hat: DMatrix<f64>,
    q: usize,
    n_basis: usize,
    n: usize,
    groups: Vec<usize>,
    leading: usize,
}

impl SandwichCovariance {
    /// Assembles the sandwich on `[alpha, leading groups (given order), remaining
    /// nonzero groups of theta (ascending)]` with the default correction.
    pub fn assemble(
        design: &DesignMatrix,
        y: &DVector<f64>,
        family: Family,
        theta_hat: &ThetaVector,
        leading: &[usize],
    ) -> Result<Self> {
        Self::assemble_with(design, y, family, theta_hat, leading, SandwichCorrection::default())
    }

    /// [`SandwichCovariance::assemble`] with a finite-sample correction of `Sigma`.
    pub fn assemble_with(
        design: &DesignMatrix,
        y: &DVector<f64>,
        family: Family,
        theta_hat: &ThetaVector,
        leading: &[usize],
        correction: SandwichCorrection,
    ) -> Result<Self> {
        ensure!(y.len() == design.n(), DimensionMismatch, "{} outcomes for {} rows", y.len(), design.n());
        ensure!(
            theta_hat.len() == design.ncols() && theta_hat.n_basis() == design.n_basis(),
            DimensionMismatch,
            "parameter layout does not match the design"
        );
        let (q, d, nb, n) = (design.q(), design.d(), design.n_basis(), design.n());
        for &j in leading {
            ensure!(j < d, InvalidArgument, "group index {} outside 1..={d}", j + 1);
        }
        let mut groups = leading.to_vec();
        groups.extend((0..d).filter(|j| !leading.contains(j) && theta_hat.group_norm(*j) > 0.0));

        let mut cols: Vec<usize> = (0..q).collect();
        for &j in &groups {
            cols.extend(design.group_range(j));
        }
        let dim = cols.len();
        let wt = design.matrix().select_columns(&cols);
        let eta = design.linear_predictor(theta_hat);
        let curv: Vec<f64> = eta.iter().map(|&e| family.psi_second(e)).collect();
        let mut score: Vec<f64> = eta.iter().zip(y.iter()).map(|(&e, &yi)| (family.psi_prime(e) - yi).powi(2)).collect();
        let mut q_hat = linalg::weighted_gram(&wt, Some(&curv)) / n as f64;
        linalg::symmetrize(&mut q_hat);

        let cond = linalg::condition_number_sym(&q_hat);
        if !(cond <= MAX_CONDITION) {
            return Err(HdfpError::Inference(format!(
                "the restricted information matrix is numerically singular (condition number {cond:.3e}); \
                 the tested plus active block has dimension {dim} for n = {n}"
            )));
        }
        let chol = linalg::cholesky_spd(&q_hat, "restricted information matrix")
            .map_err(|e| HdfpError::Inference(e.to_string()))?;
        match correction {
            SandwichCorrection::None => {}
            SandwichCorrection::DegreesOfFreedom => {
                ensure!(dim < n, Inference, "the restricted block has {dim} columns for n = {n}");
                let f = n as f64 / (n - dim) as f64;
                score.iter_mut().for_each(|v| *v *= f);
            }
            SandwichCorrection::Leverage | SandwichCorrection::Jackknife => {
                let power = if correction == SandwichCorrection::Leverage { 1 } else { 2 };
                // h_i = psi''_i w_i^T (n Q)^{-1} w_i
                let solved = chol.solve(&wt.transpose());
                for (i, v) in score.iter_mut().enumerate() {
                    let h = curv[i] * wt.row(i).transpose().dot(&solved.column(i)) / n as f64;
                    *v /= (1.0 - h).max(1e-8).powi(power);
                }
            }
        }
        let mut sigma_hat = linalg::weighted_gram(&wt, Some(&score)) / n as f64;
        linalg::symmetrize(&mut sigma_hat);
        let left = chol.solve(&sigma_hat);
        let mut psi_hat = chol.solve(&left.transpose());
        linalg::symmetrize(&mut psi_hat);
        Ok(Self {
            q_hat,
            sigma_hat,
            psi_hat,
            q,
            n_basis: nb,
            n,
            groups,
            leading: leading.len(),
        })
    }

    /// Group order of the restricted block (tested groups first).
    pub fn groups(&self) -> &[usize] {
        &self.groups
    }

    pub fn dim(&self) -> usize {
        self.q + self.groups.len() * self.n_basis
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Offset of group `j` inside the restricted block.
    pub fn group_offset(&self, j: usize) -> Option<usize> {
        self.groups.iter().position(|&g| g == j).map(|pos| self.q + pos * self.n_basis)
    }

    /// Restricted parameter `theta_{M ∪ S}` in block order.
    pub fn restrict(&self, theta: &ThetaVector) -> DVector<f64> {
        let mut v: Vec<f64> = theta.alpha().to_vec();
        for &j in &self.groups {
            v.extend_from_slice(theta.group(j));
        }
        DVector::from_vec(v)
    }
}

/// Sandwich for a hypothesis: tested groups lead, the fit's active set follows.
pub fn assemble_sandwich(
    design: &DesignMatrix,
    y: &DVector<f64>,
    family: Family,
    fit: &FitResult,
    hypothesis: &Hypothesis,
) -> Result<SandwichCovariance> {
    SandwichCovariance::assemble(design, y, family, &fit.theta_hat, hypothesis.test_set())
}

/// `A = (C ⊗ I_N) [0, I_{mN}, 0]` on the restricted block.
fn constraint_matrix(cov: &SandwichCovariance, hypothesis: &Hypothesis) -> Result<DMatrix<f64>> {
    let nb = cov.n_basis;
    let c = hypothesis.c_matrix();
    let (r, m) = c.shape();
    ensure!(
        cov.leading == m && cov.groups[..m] == *hypothesis.test_set(),
        InvalidArgument,
        "sandwich layout was not assembled for this hypothesis"
    );
    let mut a = DMatrix::zeros(r * nb, cov.dim());
    for row in 0..r {
        for i in 0..m {
            let coef = c[(row, i)];
            for k in 0..nb {
                a[(row * nb + k, cov.q + i * nb + k)] = coef;
            }
        }
    }
    Ok(a)
}

/// `N^{-1/2} vec(Gram^{-1} ∫ B t^T)`.
fn scaled_target(hypothesis: &Hypothesis, basis: &BSplineBasis) -> Result<DVector<f64>> {
    let nb = basis.size();
    let r = hypothesis.rows();
    match hypothesis.target() {
        None => Ok(DVector::zeros(r * nb)),
        Some(t) => {
            let coef = basis.project(t)?;
            let scale = (nb as f64).sqrt();
            Ok(DVector::from_iterator(r * nb, coef.iter().map(|v| v / scale)))
        }
    }
}

pub fn wald_test(
    fit: &FitResult,
    cov: &SandwichCovariance,
    hypothesis: &Hypothesis,
    basis: &BSplineBasis,
) -> Result<TestResult> {
    wald_test_with(fit, cov, hypothesis, basis, MiddleMatrix::Wald, &DEFAULT_LEVELS)
}

pub fn wald_test_with(
    fit: &FitResult,
    cov: &SandwichCovariance,
    hypothesis: &Hypothesis,
    basis: &BSplineBasis,
    middle: MiddleMatrix,
    levels: &[f64],
) -> Result<TestResult> {
    ensure!(
        basis.size() == cov.n_basis,
        DimensionMismatch,
        "basis has {} functions, fit uses {}",
        basis.size(),
        cov.n_basis
    );
    let a = constraint_matrix(cov, hypothesis)?;
    let theta = cov.restrict(&fit.theta_hat);
    let diff = &a * theta - scaled_target(hypothesis, basis)?;
    let quad = match middle {
        MiddleMatrix::Wald => {
            let mut v = &a * &cov.psi_hat * a.transpose();
            linalg::symmetrize(&mut v);
            let chol = linalg::cholesky_spd(&v, "constraint covariance A Psi A^T")
                .map_err(|_| HdfpError::Inference("constraint covariance A Psi A^T is singular".into()))?;
            diff.dot(&chol.solve(&diff))
        }
        MiddleMatrix::Literal => {
            let chol = linalg::cholesky_spd(&cov.psi_hat, "sandwich covariance")
                .map_err(|_| HdfpError::Inference("sandwich covariance is singular".into()))?;
            let inv = chol.inverse();
            let m = &a * inv * a.transpose();
            diff.dot(&(m * &diff))
        }
    };
    let statistic = (cov.n as f64 * quad).max(0.0);
    let df = hypothesis.rows() * basis.size();
    let p_value = chi2_sf(statistic, df as f64)?;
    let reject_at = levels
        .iter()
        .map(|&l| Ok((l, statistic > chi2_quantile(1.0 - l, df as f64)?)))
        .collect::<Result<Vec<_>>>()?;
    Ok(TestResult {
        statistic,
        df,
        p_value,
        reject_at,
        active_set: fit.active_set.clone(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interval {
    pub estimate: f64,
    pub lower: f64,
    pub upper: f64,
}

impl Interval {
    pub fn contains(&self, v: f64) -> bool {
        self.lower <= v && v <= self.upper
    }
}

/// Normal-theory intervals `alpha_k ± z sqrt(Psi_kk / n)`.
pub fn ci_alpha(fit: &FitResult, cov: &SandwichCovariance, level: f64) -> Result<Vec<Interval>> {
    ensure!(level > 0.0 && level < 1.0, InvalidArgument, "confidence level must lie in (0, 1), got {level}");
    let z = normal_quantile(0.5 * (1.0 + level))?;
    Ok(fit
        .alpha()
        .iter()
        .enumerate()
        .map(|(k, &a)| {
            let half = z * (cov.psi_hat[(k, k)].max(0.0) / cov.n as f64).sqrt();
            Interval {
                estimate: a,
                lower: a - half,
                upper: a + half,
            }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Band {
    pub s: Vec<f64>,
    pub center: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

/// Pointwise band `B(s)^T gamma_j ± z sqrt(N B(s)^T Psi_jj B(s) / n)`.
pub fn ci_beta_pointwise(
    fit: &FitResult,
    cov: &SandwichCovariance,
    basis: &BSplineBasis,
    j: usize,
    s_grid: &[f64],
    level: f64,
) -> Result<Band> {
    ensure!(level > 0.0 && level < 1.0, InvalidArgument, "confidence level must lie in (0, 1), got {level}");
    let nb = basis.size();
    ensure!(nb == cov.n_basis, DimensionMismatch, "basis has {nb} functions, fit uses {}", cov.n_basis);
    let offset = cov.group_offset(j).ok_or_else(|| {
        HdfpError::InvalidArgument(format!(
            "group {} is neither tested nor active; its estimate is exactly zero",
            j + 1
        ))
    })?;
    let z = normal_quantile(0.5 * (1.0 + level))?;
    let block = cov.psi_hat.view((offset, offset), (nb, nb));
    let gamma = fit.gamma_hat.row(j).transpose();
    let bmat = basis.eval_grid(s_grid)?;
    let mut band = Band {
        s: s_grid.to_vec(),
        center: Vec::with_capacity(s_grid.len()),
        lower: Vec::with_capacity(s_grid.len()),
        upper: Vec::with_capacity(s_grid.len()),
    };
    for g in 0..s_grid.len() {
        let b = bmat.row(g).transpose();
        let center = b.dot(&gamma);
        let var = nb as f64 * (b.transpose() * block * &b)[(0, 0)] / cov.n as f64;
        let half = z * var.max(0.0).sqrt();
        band.center.push(center);
        band.lower.push(center - half);
        band.upper.push(center + half);
    }
    Ok(band)
}
