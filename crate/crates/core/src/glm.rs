//! Exponential-family pieces of the functional linear model: the data
//! container, the spline design matrix, the stacked parameter vector, and
//! the negative log-likelihood with its derivatives.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::bspline::{validate_grid, BSplineBasis};
use crate::error::{ensure, Result};
use crate::linalg;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Gaussian,
    Logistic,
}

impl Family {
    /// Cumulant function `psi`.
    pub fn psi(self, t: f64) -> f64 {
        match self {
            Family::Gaussian => 0.5 * t * t,
            Family::Logistic => {
                if t > 0.0 {
                    t + (-t).exp().ln_1p()
                } else {
                    t.exp().ln_1p()
                }
            }
        }
    }

    /// Mean function `psi'`.
    pub fn psi_prime(self, t: f64) -> f64 {
        match self {
            Family::Gaussian => t,
            Family::Logistic => sigmoid(t),
        }
    }

    /// Variance function `psi''`.
    pub fn psi_second(self, t: f64) -> f64 {
        match self {
            Family::Gaussian => 1.0,
            Family::Logistic => {
                let e = (-t.abs()).exp();
                e / ((1.0 + e) * (1.0 + e))
            }
        }
    }

    /// Upper bound on `psi''`.
    pub fn curvature_bound(self) -> f64 {
        match self {
            Family::Gaussian => 1.0,
            Family::Logistic => 0.25,
        }
    }
}

impl std::fmt::Display for Family {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Family::Gaussian => "gaussian",
            Family::Logistic => "logistic",
        })
    }
}

pub fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

/// Outcomes, baseline covariates, and `d`-channel functional predictors on
/// a grid shared by all subjects.
#[derive(Debug, Clone, PartialEq)]
pub struct FunctionalDataset {
    y: DVector<f64>,
    z: DMatrix<f64>,
    grid: Vec<f64>,
    x: Vec<DMatrix<f64>>,
}

impl FunctionalDataset {
    /// `x[i]` is the `d x G` matrix of subject `i`'s curves.
    pub fn new(y: DVector<f64>, z: DMatrix<f64>, grid: Vec<f64>, x: Vec<DMatrix<f64>>) -> Result<Self> {
        let n = y.len();
        ensure!(n >= 1, InvalidArgument, "dataset has no subjects");
        ensure!(z.nrows() == n, DimensionMismatch, "z has {} rows for {} outcomes", z.nrows(), n);
        ensure!(x.len() == n, DimensionMismatch, "{} functional records for {} outcomes", x.len(), n);
        validate_grid(&grid)?;
        ensure!(grid.len() >= 2, InvalidArgument, "functional grid needs at least two points");
        let d = x[0].nrows();
        ensure!(d >= 1, InvalidArgument, "no functional channels");
        for (i, xi) in x.iter().enumerate() {
            ensure!(
                xi.nrows() == d && xi.ncols() == grid.len(),
                DimensionMismatch,
                "subject {i}: expected {d} x {} curves, got {} x {}",
                grid.len(),
                xi.nrows(),
                xi.ncols()
            );
        }
        let finite = y.iter().chain(z.iter()).chain(x.iter().flat_map(|m| m.iter())).all(|v| v.is_finite());
        ensure!(finite, InvalidArgument, "dataset contains missing or non-finite values");
        Ok(Self { y, z, grid, x })
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn q(&self) -> usize {
        self.z.ncols()
    }

    pub fn d(&self) -> usize {
        self.x[0].nrows()
    }

    pub fn y(&self) -> &DVector<f64> {
        &self.y
    }

    pub fn z(&self) -> &DMatrix<f64> {
        &self.z
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn x(&self) -> &[DMatrix<f64>] {
        &self.x
    }

    /// Subjects at `rows`, in the given order.
    pub fn subset(&self, rows: &[usize]) -> Result<Self> {
        let y = DVector::from_iterator(rows.len(), rows.iter().map(|&i| self.y[i]));
        let z = self.z.select_rows(rows);
        let x = rows.iter().map(|&i| self.x[i].clone()).collect();
        Self::new(y, z, self.grid.clone(), x)
    }
}

/// Rows `[Z_i^T, N^{1/2} (∫ X_i ⊗ B)^T]`: a baseline block of width `q`
/// followed by `d` groups of width `N`.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix {
    w: DMatrix<f64>,
    q: usize,
    d: usize,
    n_basis: usize,
}

impl DesignMatrix {
    pub fn build(dataset: &FunctionalDataset, basis: &BSplineBasis) -> Result<Self> {
        let (n, q, d, nb) = (dataset.n(), dataset.q(), dataset.d(), basis.size());
        let m = basis.integration_matrix(dataset.grid())?;
        let scale = (nb as f64).sqrt();
        let mut w = DMatrix::zeros(n, q + d * nb);
        for i in 0..n {
            for c in 0..q {
                w[(i, c)] = dataset.z()[(i, c)];
            }
            let block = &dataset.x()[i] * &m;
            for j in 0..d {
                for k in 0..nb {
                    w[(i, q + j * nb + k)] = scale * block[(j, k)];
                }
            }
        }
        Ok(Self { w, q, d, n_basis: nb })
    }

    pub fn from_parts(w: DMatrix<f64>, q: usize, d: usize, n_basis: usize) -> Result<Self> {
        ensure!(
            w.ncols() == q + d * n_basis,
            DimensionMismatch,
            "design has {} columns, layout needs {}",
            w.ncols(),
            q + d * n_basis
        );
        Ok(Self { w, q, d, n_basis })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.w
    }

    pub fn n(&self) -> usize {
        self.w.nrows()
    }

    pub fn q(&self) -> usize {
        self.q
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn n_basis(&self) -> usize {
        self.n_basis
    }

    pub fn ncols(&self) -> usize {
        self.w.ncols()
    }

    /// Column range of functional group `j` (0-based).
    pub fn group_range(&self, j: usize) -> std::ops::Range<usize> {
        let start = self.q + j * self.n_basis;
        start..start + self.n_basis
    }

    pub fn select_rows(&self, rows: &[usize]) -> Self {
        Self {
            w: self.w.select_rows(rows),
            q: self.q,
            d: self.d,
            n_basis: self.n_basis,
        }
    }

    /// Baseline columns `Z` (`n x q`).
    pub fn baseline(&self) -> DMatrix<f64> {
        self.w.columns(0, self.q).into_owned()
    }

    /// Functional columns (`n x dN`).
    pub fn functional(&self) -> DMatrix<f64> {
        self.w.columns(self.q, self.d * self.n_basis).into_owned()
    }

    pub fn linear_predictor(&self, theta: &ThetaVector) -> DVector<f64> {
        &self.w * theta.as_vector()
    }

    fn check(&self, y: &DVector<f64>, theta: &ThetaVector) -> Result<()> {
        ensure!(y.len() == self.n(), DimensionMismatch, "{} outcomes for {} design rows", y.len(), self.n());
        ensure!(
            theta.len() == self.ncols() && theta.q() == self.q && theta.n_basis() == self.n_basis,
            DimensionMismatch,
            "parameter layout (q={}, d={}, N={}) does not match design (q={}, d={}, N={})",
            theta.q(),
            theta.d(),
            theta.n_basis(),
            self.q,
            self.d,
            self.n_basis
        );
        Ok(())
    }
}

/// Stacked parameter `(alpha, N^{-1/2} vec(Gamma))`.
///
/// Group `j` stores `N^{-1/2} gamma_j`; [`ThetaVector::gamma`] returns the
/// unscaled spline coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct ThetaVector {
    q: usize,
    d: usize,
    n_basis: usize,
    values: DVector<f64>,
}

impl ThetaVector {
    pub fn zeros(q: usize, d: usize, n_basis: usize) -> Self {
        Self {
            q,
            d,
            n_basis,
            values: DVector::zeros(q + d * n_basis),
        }
    }

    pub fn from_vector(q: usize, d: usize, n_basis: usize, values: DVector<f64>) -> Result<Self> {
        ensure!(
            values.len() == q + d * n_basis,
            DimensionMismatch,
            "vector of length {} for layout q={q}, d={d}, N={n_basis}",
            values.len()
        );
        Ok(Self { q, d, n_basis, values })
    }

    /// Builds from `alpha` and unscaled spline coefficients `gamma` (`d x N`).
    pub fn from_alpha_gamma(alpha: &DVector<f64>, gamma: &DMatrix<f64>) -> Self {
        let (q, d, nb) = (alpha.len(), gamma.nrows(), gamma.ncols());
        let scale = (nb as f64).sqrt();
        let mut values = DVector::zeros(q + d * nb);
        values.rows_mut(0, q).copy_from(alpha);
        for j in 0..d {
            for k in 0..nb {
                values[q + j * nb + k] = gamma[(j, k)] / scale;
            }
        }
        Self { q, d, n_basis: nb, values }
    }

    pub fn q(&self) -> usize {
        self.q
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn n_basis(&self) -> usize {
        self.n_basis
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn as_vector(&self) -> &DVector<f64> {
        &self.values
    }

    pub fn as_vector_mut(&mut self) -> &mut DVector<f64> {
        &mut self.values
    }

    pub fn into_vector(self) -> DVector<f64> {
        self.values
    }

    pub fn alpha(&self) -> &[f64] {
        &self.values.as_slice()[..self.q]
    }

    /// Scaled block `N^{-1/2} gamma_j`.
    pub fn group(&self, j: usize) -> &[f64] {
        let start = self.q + j * self.n_basis;
        &self.values.as_slice()[start..start + self.n_basis]
    }

    pub fn group_mut(&mut self, j: usize) -> &mut [f64] {
        let start = self.q + j * self.n_basis;
        &mut self.values.as_mut_slice()[start..start + self.n_basis]
    }

    /// All scaled functional blocks, i.e. `D theta`.
    pub fn functional(&self) -> &[f64] {
        &self.values.as_slice()[self.q..]
    }

    pub fn group_norm(&self, j: usize) -> f64 {
        linalg::norm_slice(self.group(j))
    }

    /// Unscaled spline coefficients, `d x N`.
    pub fn gamma(&self) -> DMatrix<f64> {
        let scale = (self.n_basis as f64).sqrt();
        DMatrix::from_fn(self.d, self.n_basis, |j, k| scale * self.values[self.q + j * self.n_basis + k])
    }

    /// `||alpha||_1 + sum_j ||N^{-1/2} gamma_j||_2`.
    pub fn mixed_norm(&self) -> f64 {
        self.alpha().iter().map(|a| a.abs()).sum::<f64>() + (0..self.d).map(|j| self.group_norm(j)).sum::<f64>()
    }
}

/// `n^{-1} sum_i { psi(w_i^T theta) - y_i w_i^T theta }`.
pub fn loss(design: &DesignMatrix, y: &DVector<f64>, family: Family, theta: &ThetaVector) -> Result<f64> {
    design.check(y, theta)?;
    let eta = design.linear_predictor(theta);
    Ok(loss_from_eta(&eta, y, family))
}

pub(crate) fn loss_from_eta(eta: &DVector<f64>, y: &DVector<f64>, family: Family) -> f64 {
    let n = eta.len() as f64;
    eta.iter().zip(y.iter()).map(|(&e, &yi)| family.psi(e) - yi * e).sum::<f64>() / n
}

pub fn gradient(design: &DesignMatrix, y: &DVector<f64>, family: Family, theta: &ThetaVector) -> Result<DVector<f64>> {
    design.check(y, theta)?;
    let eta = design.linear_predictor(theta);
    Ok(gradient_from_eta(design, &eta, y, family))
}

pub(crate) fn gradient_from_eta(design: &DesignMatrix, eta: &DVector<f64>, y: &DVector<f64>, family: Family) -> DVector<f64> {
    let n = eta.len() as f64;
    let resid = DVector::from_iterator(eta.len(), eta.iter().zip(y.iter()).map(|(&e, &yi)| family.psi_prime(e) - yi));
    design.matrix().tr_mul(&resid) / n
}

pub fn hessian(design: &DesignMatrix, y: &DVector<f64>, family: Family, theta: &ThetaVector) -> Result<DMatrix<f64>> {
    design.check(y, theta)?;
    let eta = design.linear_predictor(theta);
    let weights: Vec<f64> = eta.iter().map(|&e| family.psi_second(e)).collect();
    let mut h = match family {
        Family::Gaussian => linalg::weighted_gram(design.matrix(), None),
        Family::Logistic => linalg::weighted_gram(design.matrix(), Some(&weights)),
    };
    h /= design.n() as f64;
    linalg::symmetrize(&mut h);
    Ok(h)
}
