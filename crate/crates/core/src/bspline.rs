//! Clamped B-spline bases on `[0, 1]`.
//!
//! A basis of order `b` (degree `b - 1`) with `K` interior knots carries the
//! knot vector `0 = ... = 0 < t_1 < ... < t_K < 1 = ... = 1`, each boundary
//! repeated `b` times, and spans `N = K + b` functions. Values come from the
//! Cox–de Boor recursion; basis–basis integrals use Gauss–Legendre rules on
//! each knot span, which are exact for the piecewise polynomial products.
//! Integrals against sampled curves integrate the piecewise-linear
//! interpolant of the samples, i.e. a trapezoid rule on the sample grid.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{ensure, HdfpError, Result};
use crate::linalg;

/// Real-valued curves sampled on a shared grid.
///
/// `values` has one row per channel and one column per grid point.
#[derive(Debug, Clone, PartialEq)]
pub struct GridFunction {
    grid: Vec<f64>,
    values: DMatrix<f64>,
}

impl GridFunction {
    pub fn new(grid: Vec<f64>, values: DMatrix<f64>) -> Result<Self> {
        validate_grid(&grid)?;
        ensure!(
            values.ncols() == grid.len(),
            DimensionMismatch,
            "grid has {} points but values have {} columns",
            grid.len(),
            values.ncols()
        );
        Ok(Self { grid, values })
    }

    /// Samples `f` on `grid`, one channel.
    pub fn from_fn(grid: &[f64], f: impl Fn(f64) -> f64) -> Result<Self> {
        let values = DMatrix::from_fn(1, grid.len(), |_, g| f(grid[g]));
        Self::new(grid.to_vec(), values)
    }

    /// The zero function with `channels` rows.
    pub fn zeros(grid: &[f64], channels: usize) -> Result<Self> {
        Self::new(grid.to_vec(), DMatrix::zeros(channels, grid.len()))
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn channels(&self) -> usize {
        self.values.nrows()
    }

    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grid.is_empty()
    }
}

/// `n` equally spaced points from 0 to 1 inclusive.
pub fn uniform_grid(n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![0.0],
        _ => (0..n).map(|i| i as f64 / (n - 1) as f64).collect(),
    }
}

pub(crate) fn validate_grid(grid: &[f64]) -> Result<()> {
    ensure!(!grid.is_empty(), InvalidArgument, "grid is empty");
    ensure!(
        grid.iter().all(|s| s.is_finite() && (0.0..=1.0).contains(s)),
        InvalidArgument,
        "grid points must lie in [0, 1]"
    );
    ensure!(
        grid.windows(2).all(|w| w[0] < w[1]),
        InvalidArgument,
        "grid must be strictly increasing"
    );
    Ok(())
}

/// Trapezoid weights for a strictly increasing grid.
pub fn trapezoid_weights(grid: &[f64]) -> Vec<f64> {
    let g = grid.len();
    let mut w = vec![0.0; g];
    if g < 2 {
        return w;
    }
    for i in 0..g - 1 {
        let h = 0.5 * (grid[i + 1] - grid[i]);
        w[i] += h;
        w[i + 1] += h;
    }
    w
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BSplineBasis {
    order: usize,
    interior: Vec<f64>,
    knots: Vec<f64>,
}

impl BSplineBasis {
    /// Basis with `num_interior_knots` equally spaced interior knots `k / (K + 1)`.
    pub fn uniform(order: usize, num_interior_knots: usize) -> Result<Self> {
        let k = num_interior_knots;
        let interior = (1..=k).map(|i| i as f64 / (k + 1) as f64).collect();
        Self::with_interior_knots(order, interior)
    }

    /// Uniform basis of the given order with `size` functions in total.
    pub fn with_size(order: usize, size: usize) -> Result<Self> {
        ensure!(
            size >= order,
            InvalidArgument,
            "a basis of order {order} needs at least {order} functions, got {size}"
        );
        Self::uniform(order, size - order)
    }

    pub fn with_interior_knots(order: usize, interior: Vec<f64>) -> Result<Self> {
        ensure!(order >= 1, InvalidArgument, "spline order must be at least 1");
        ensure!(
            interior.iter().all(|t| t.is_finite() && *t > 0.0 && *t < 1.0),
            InvalidArgument,
            "interior knots must lie strictly inside (0, 1)"
        );
        ensure!(
            interior.windows(2).all(|w| w[0] < w[1]),
            InvalidArgument,
            "interior knots must be strictly increasing"
        );
        let mut knots = vec![0.0; order];
        knots.extend_from_slice(&interior);
        knots.extend(std::iter::repeat_n(1.0, order));
        Ok(Self {
            order,
            interior,
            knots,
        })
    }

    pub fn order(&self) -> usize {
        self.order
    }

    /// Number of basis functions, `K + order`.
    pub fn size(&self) -> usize {
        self.interior.len() + self.order
    }

    pub fn interior_knots(&self) -> &[f64] {
        &self.interior
    }

    /// Full clamped knot vector of length `size + order`.
    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    /// Index `mu` with `knots[mu] <= s < knots[mu + 1]`; `s = 1` maps to the last span.
    fn span(&self, s: f64) -> usize {
        let n = self.size();
        if s >= 1.0 {
            return n - 1;
        }
        // knots[order-1..=n] are the distinct span boundaries
        let lo = self.order - 1;
        let slice = &self.knots[lo..=n];
        let pos = slice.partition_point(|&t| t <= s);
        lo + pos - 1
    }

    /// Values of the `order` basis functions that can be nonzero at `s`,
    /// together with the index of the first of them.
    fn nonzero(&self, s: f64, out: &mut [f64]) -> usize {
        let p = self.order - 1;
        let mu = self.span(s);
        let t = &self.knots;
        let mut left = vec![0.0; p + 1];
        let mut right = vec![0.0; p + 1];
        out[0] = 1.0;
        for j in 1..=p {
            left[j] = s - t[mu + 1 - j];
            right[j] = t[mu + j] - s;
            let mut saved = 0.0;
            for r in 0..j {
                let denom = right[r + 1] + left[j - r];
                let temp = if denom > 0.0 { out[r] / denom } else { 0.0 };
                out[r] = saved + right[r + 1] * temp;
                saved = left[j - r] * temp;
            }
            out[j] = saved;
        }
        mu - p
    }

    /// All `N` basis values at `s`.
    pub fn eval(&self, s: f64) -> Result<DVector<f64>> {
        ensure!(
            s.is_finite() && (0.0..=1.0).contains(&s),
            InvalidArgument,
            "evaluation point {s} outside [0, 1]"
        );
        let mut local = vec![0.0; self.order];
        let first = self.nonzero(s, &mut local);
        let mut v = DVector::zeros(self.size());
        for (r, val) in local.into_iter().enumerate() {
            v[first + r] = val;
        }
        Ok(v)
    }

    /// Basis values on a grid: `G x N`.
    pub fn eval_grid(&self, grid: &[f64]) -> Result<DMatrix<f64>> {
        validate_grid(grid)?;
        let mut m = DMatrix::zeros(grid.len(), self.size());
        let mut local = vec![0.0; self.order];
        for (g, &s) in grid.iter().enumerate() {
            let first = self.nonzero(s, &mut local);
            for (r, &val) in local.iter().enumerate() {
                m[(g, first + r)] = val;
            }
        }
        Ok(m)
    }

    /// Exact integrals `∫ B_k`, equal to `(t_{k+b} - t_k) / b`.
    pub fn masses(&self) -> DVector<f64> {
        let b = self.order;
        DVector::from_fn(self.size(), |k, _| (self.knots[k + b] - self.knots[k]) / b as f64)
    }

    /// `∫_0^1 B(s) B(s)^T ds` with `order` Gauss–Legendre nodes per knot span.
    pub fn gram(&self) -> DMatrix<f64> {
        let n = self.size();
        let b = self.order;
        let (nodes, weights) = gauss_legendre(b);
        let mut gram = DMatrix::zeros(n, n);
        let mut local = vec![0.0; b];
        for mu in (b - 1)..n {
            let (lo, hi) = (self.knots[mu], self.knots[mu + 1]);
            if hi <= lo {
                continue;
            }
            let half = 0.5 * (hi - lo);
            let mid = 0.5 * (hi + lo);
            for (x, w) in nodes.iter().zip(&weights) {
                let s = mid + half * x;
                let first = self.nonzero(s, &mut local);
                for r in 0..b {
                    for c in 0..b {
                        gram[(first + r, first + c)] += half * w * local[r] * local[c];
                    }
                }
            }
        }
        gram
    }

    /// `G x N` matrix whose row `g` holds `∫ h_g(s) B_k(s) ds`, where `h_g` is
    /// the piecewise-linear hat function of grid point `g`.
    ///
    /// Multiplying sampled curves (channels x G) by it integrates their
    /// piecewise-linear interpolant against each `B_k` exactly: the
    /// trapezoid rule with the basis treated exactly between samples.
    pub fn integration_matrix(&self, grid: &[f64]) -> Result<DMatrix<f64>> {
        ensure!(grid.len() >= 2, InvalidArgument, "quadrature needs at least two grid points");
        validate_grid(grid)?;
        let b = self.order;
        let (nodes, weights) = gauss_legendre(b + 1);
        let mut m = DMatrix::zeros(grid.len(), self.size());
        let mut local = vec![0.0; b];
        let mut knot_iter = self.interior.iter().peekable();
        for g in 0..grid.len() - 1 {
            let (s0, s1) = (grid[g], grid[g + 1]);
            let h = s1 - s0;
            let mut cuts = vec![s0];
            while let Some(&&t) = knot_iter.peek() {
                if t >= s1 {
                    break;
                }
                if t > s0 {
                    cuts.push(t);
                }
                knot_iter.next();
            }
            cuts.push(s1);
            for w2 in cuts.windows(2) {
                let half = 0.5 * (w2[1] - w2[0]);
                let mid = 0.5 * (w2[1] + w2[0]);
                for (x, w) in nodes.iter().zip(&weights) {
                    let s = mid + half * x;
                    let right = (s - s0) / h;
                    let first = self.nonzero(s, &mut local);
                    for (r, &val) in local.iter().enumerate() {
                        let c = half * w * val;
                        m[(g, first + r)] += c * (1.0 - right);
                        m[(g + 1, first + r)] += c * right;
                    }
                }
            }
        }
        Ok(m)
    }

    /// Approximations of `∫ f_c(s) B_k(s) ds` from the samples: `channels x N`.
    pub fn integrate_against(&self, f: &GridFunction) -> Result<DMatrix<f64>> {
        let m = self.integration_matrix(f.grid())?;
        Ok(f.values() * m)
    }

    /// L2 projection coefficients `Gram^{-1} ∫ B t^T`: `N x channels`.
    pub fn project(&self, t: &GridFunction) -> Result<DMatrix<f64>> {
        let moments = self.integrate_against(t)?.transpose();
        let chol = linalg::cholesky_spd(&self.gram(), "spline Gram matrix")
            .map_err(|e| HdfpError::Numerical(e.to_string()))?;
        Ok(chol.solve(&moments))
    }

    /// Evaluates the spline with coefficient columns `coeffs` (`N x channels`) on `grid`.
    pub fn synthesize(&self, coeffs: &DMatrix<f64>, grid: &[f64]) -> Result<GridFunction> {
        ensure!(
            coeffs.nrows() == self.size(),
            DimensionMismatch,
            "expected {} coefficient rows, got {}",
            self.size(),
            coeffs.nrows()
        );
        let b = self.eval_grid(grid)?;
        GridFunction::new(grid.to_vec(), (b * coeffs).transpose())
    }
}

/// Gauss–Legendre nodes and weights on `[-1, 1]`.
pub fn gauss_legendre(m: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; m];
    let mut weights = vec![0.0; m];
    for i in 0..m.div_ceil(2) {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (m as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre(m, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre(m, x);
        if d != 0.0 {
            dp = d;
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[m - 1 - i] = x;
        weights[i] = w;
        weights[m - 1 - i] = w;
    }
    (nodes, weights)
}

/// `P_m(x)` and its derivative by the three-term recurrence.
fn legendre(m: usize, x: f64) -> (f64, f64) {
    let (mut p0, mut p1) = (1.0, x);
    if m == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=m {
        let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
        p0 = p1;
        p1 = p2;
    }
    let d = m as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn binom(n: usize, k: usize) -> f64 {
        (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
    }

    #[test]
    fn sizes_follow_knot_count() {
        assert_eq!(BSplineBasis::uniform(4, 2).unwrap().size(), 6);
        assert_eq!(BSplineBasis::uniform(1, 3).unwrap().size(), 4);
        let b = BSplineBasis::uniform(3, 2).unwrap();
        assert_eq!(b.knots(), &[0.0, 0.0, 0.0, 1.0 / 3.0, 2.0 / 3.0, 1.0, 1.0, 1.0]);
    }

    #[test]
    fn rejects_order_zero() {
        assert!(BSplineBasis::uniform(0, 3).is_err());
        assert!(BSplineBasis::with_size(4, 3).is_err());
    }

    #[test]
    fn order_one_is_interval_indicators() {
        let b = BSplineBasis::uniform(1, 3).unwrap();
        for (s, k) in [(0.1, 0), (0.3, 1), (0.6, 2), (0.9, 3), (0.25, 1), (1.0, 3)] {
            let v = b.eval(s).unwrap();
            for j in 0..4 {
                assert_eq!(v[j], if j == k { 1.0 } else { 0.0 }, "s={s} j={j}");
            }
        }
    }

    #[test]
    fn no_interior_knots_gives_bernstein_cubics() {
        let b = BSplineBasis::uniform(4, 0).unwrap();
        for s in uniform_grid(20) {
            let v = b.eval(s).unwrap();
            for k in 0..4 {
                let bern = binom(3, k) * s.powi(k as i32) * (1.0 - s).powi(3 - k as i32);
                assert_abs_diff_eq!(v[k], bern, epsilon = 1e-14);
            }
        }
    }

    #[test]
    fn endpoint_values() {
        let b = BSplineBasis::uniform(4, 5).unwrap();
        let v0 = b.eval(0.0).unwrap();
        let v1 = b.eval(1.0).unwrap();
        assert_eq!(v0[0], 1.0);
        assert_eq!(v1[b.size() - 1], 1.0);
        assert_abs_diff_eq!(v0.sum(), 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(v1.sum(), 1.0, epsilon = 1e-15);
    }

    #[test]
    fn hat_functions_by_hand() {
        let b = BSplineBasis::uniform(2, 1).unwrap();
        let v = b.eval(0.25).unwrap();
        assert_abs_diff_eq!(v[0], 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(v[1], 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(v[2], 0.0, epsilon = 1e-15);
    }

    #[test]
    fn rejects_points_outside_unit_interval() {
        let b = BSplineBasis::uniform(4, 2).unwrap();
        assert!(b.eval(-1e-9).is_err());
        assert!(b.eval(1.0 + 1e-9).is_err());
        assert!(b.eval(f64::NAN).is_err());
    }

    #[test]
    fn gram_of_indicators_is_diagonal() {
        let g = BSplineBasis::uniform(1, 3).unwrap().gram();
        assert_abs_diff_eq!(g, DMatrix::from_diagonal_element(4, 4, 0.25), epsilon = 1e-15);
    }

    #[test]
    fn gram_row_sums_are_masses() {
        let b = BSplineBasis::uniform(4, 7).unwrap();
        let g = b.gram();
        let rows = &g * DVector::from_element(b.size(), 1.0);
        assert_abs_diff_eq!(rows, b.masses(), epsilon = 1e-14);
        assert_abs_diff_eq!(b.masses().sum(), 1.0, epsilon = 1e-14);
    }

    #[test]
    fn gauss_legendre_integrates_polynomials() {
        for m in 1..8 {
            let (x, w) = gauss_legendre(m);
            for deg in 0..(2 * m) {
                let approx: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(deg as i32)).sum();
                let exact = if deg % 2 == 1 { 0.0 } else { 2.0 / (deg as f64 + 1.0) };
                assert_abs_diff_eq!(approx, exact, epsilon = 1e-13);
            }
        }
    }

    #[test]
    fn integrate_constant_and_zero() {
        let b = BSplineBasis::uniform(4, 3).unwrap();
        let grid = uniform_grid(20_001);
        let one = GridFunction::from_fn(&grid, |_| 1.0).unwrap();
        let row = b.integrate_against(&one).unwrap();
        assert_abs_diff_eq!(row.transpose().column(0).into_owned(), b.masses(), epsilon = 1e-8);
        let zero = GridFunction::zeros(&grid, 2).unwrap();
        assert_eq!(b.integrate_against(&zero).unwrap(), DMatrix::zeros(2, b.size()));
    }

    #[test]
    fn integrate_identity_against_indicators() {
        let b = BSplineBasis::uniform(1, 1).unwrap();
        let grid = uniform_grid(1000);
        let f = GridFunction::from_fn(&grid, |s| s).unwrap();
        let row = b.integrate_against(&f).unwrap();
        assert_abs_diff_eq!(row[(0, 0)], 0.125, epsilon = 1e-6);
        assert_abs_diff_eq!(row[(0, 1)], 0.375, epsilon = 1e-6);
    }

    #[test]
    fn integrate_rejects_single_point() {
        let b = BSplineBasis::uniform(2, 1).unwrap();
        let f = GridFunction::from_fn(&[0.5], |s| s).unwrap();
        assert!(b.integrate_against(&f).is_err());
    }

    #[test]
    fn project_zero_and_constant() {
        let b = BSplineBasis::uniform(4, 4).unwrap();
        let grid = uniform_grid(100_001);
        let zero = GridFunction::zeros(&grid, 1).unwrap();
        assert_eq!(b.project(&zero).unwrap(), DMatrix::zeros(b.size(), 1));
        let one = GridFunction::from_fn(&grid, |_| 1.0).unwrap();
        let c = b.project(&one).unwrap();
        assert_abs_diff_eq!(c, DMatrix::from_element(b.size(), 1, 1.0), epsilon = 1e-8);
    }

    #[test]
    fn grid_function_validation() {
        assert!(GridFunction::new(vec![0.0, 0.0], DMatrix::zeros(1, 2)).is_err());
        assert!(GridFunction::new(vec![0.0, 1.5], DMatrix::zeros(1, 2)).is_err());
        assert!(GridFunction::new(vec![0.0, 1.0], DMatrix::zeros(1, 3)).is_err());
    }
}
