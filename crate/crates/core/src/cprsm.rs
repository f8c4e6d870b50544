//! Contractive Peaceman–Rachford splitting for the group-SCAD penalized,
//! norm-constrained functional GLM.
//!
//! The problem is split as `f1(theta) + f2(g)` subject to `D theta = g`,
//! where `D` selects the scaled functional blocks of `theta`, `f1` is the
//! negative log-likelihood and `f2` sums the SCAD penalty over the groups
//! outside the tested set. Each sweep performs
//!
//! 1. `theta`-update: minimize `f1(theta) - rho^T (D theta - g) + beta/2 ||D theta - g||^2`;
//! 2. projection of `(|alpha|, ||theta_2j||)` onto the l1 ball of radius `R`
//!    and rescaling of each group to its projected norm;
//! 3. dual half-step `rho <- rho - alpha beta (D theta - g)`;
//! 4. `g`-update: group SCAD prox of `D theta - rho / beta`;
//! 5. dual full step with the new `g`.
//!
//! The reported functional blocks come from the `g` iterate, and the
//! unpenalized baseline block is then re-solved exactly given them.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use crate::bspline::BSplineBasis;
use crate::error::{ensure, HdfpError, Result};
use crate::glm::{self, DesignMatrix, Family, FunctionalDataset, ThetaVector};
use crate::linalg;
use crate::penalty::ScadPenalty;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CprsmConfig {
    /// Relaxation factor on both dual steps, in `(0, 1)`.
    pub relax_alpha: f64,
    /// Augmented-Lagrangian penalty parameter.
    pub pen_beta: f64,
    /// Stopping tolerance on the relative change `Delta`.
    pub tol: f64,
    pub max_iter: usize,
    /// Radius of the mixed-norm constraint `||alpha||_1 + sum_j ||theta_2j||_2 <= R`.
    pub radius: f64,
    pub newton_iters: usize,
    pub newton_tol: f64,
    /// Floor applied to the denominators of the relative changes in `Delta`.
    pub delta_floor: f64,
    /// Groups whose scaled norm falls below this are reported as exactly zero.
    pub support_threshold: f64,
}

impl Default for CprsmConfig {
    fn default() -> Self {
        Self {
            relax_alpha: 0.9,
            pen_beta: 2.0,
            tol: 5e-4,
            max_iter: 2000,
            radius: 2e5,
            newton_iters: 25,
            newton_tol: 1e-8,
            delta_floor: 1.0,
            support_threshold: 1e-8,
        }
    }
}

impl CprsmConfig {
    pub fn validate(&self, penalty: &ScadPenalty) -> Result<()> {
        ensure!(
            self.relax_alpha > 0.0 && self.relax_alpha < 1.0,
            Config,
            "relax_alpha must lie in (0, 1), got {}",
            self.relax_alpha
        );
        ensure!(self.pen_beta.is_finite() && self.pen_beta > 0.0, Config, "pen_beta must be positive");
        ensure!(
            self.pen_beta * (penalty.a() - 1.0) > 1.0,
            Config,
            "pen_beta * (a - 1) must exceed 1 (pen_beta = {}, a = {})",
            self.pen_beta,
            penalty.a()
        );
        ensure!(self.tol > 0.0, Config, "tol must be positive");
        ensure!(self.max_iter >= 1, Config, "max_iter must be at least 1");
        ensure!(self.radius > 0.0, Config, "radius must be positive");
        ensure!(self.delta_floor > 0.0, Config, "delta_floor must be positive");
        ensure!(self.support_threshold >= 0.0, Config, "support_threshold must be nonnegative");
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    /// `(alpha, N^{-1/2} vec(Gamma))` with the functional blocks taken from the `Gamma` iterate.
    pub theta_hat: ThetaVector,
    /// Unscaled spline coefficients, `d x N`.
    pub gamma_hat: DMatrix<f64>,
    /// Penalized groups with a nonzero estimate, ascending (0-based).
    pub active_set: Vec<usize>,
    pub iterations: usize,
    pub converged: bool,
    pub final_delta: f64,
    pub objective: f64,
    /// `||D theta - g||_2` at the last iterate.
    pub primal_residual: f64,
}

impl FitResult {
    pub fn alpha(&self) -> &[f64] {
        self.theta_hat.alpha()
    }

    pub fn group_norms(&self) -> Vec<f64> {
        (0..self.theta_hat.d()).map(|j| self.theta_hat.group_norm(j)).collect()
    }
}

/// Factorization of `W^T V W / n + beta D^T D` for a fixed weight vector `V`.
///
/// When the number of functional columns exceeds the sample size, the
/// functional block is inverted through the Woodbury identity on an `n x n`
/// system and the baseline block through its Schur complement.
enum AugmentedFactor {
    Direct(Cholesky<f64, Dyn>),
    Woodbury {
        beta: f64,
        /// `V^{1/2} F / sqrt(n)`
        u: DMatrix<f64>,
        /// `beta I + U U^T`
        k: Cholesky<f64, Dyn>,
        /// `(B, P = Dm^{-1} B^T, chol(S))` for the baseline block, absent when `q = 0`
        baseline: Option<(DMatrix<f64>, DMatrix<f64>, Cholesky<f64, Dyn>)>,
    },
}

struct AugmentedSystem {
    q: usize,
    factor: AugmentedFactor,
}

impl AugmentedSystem {
    fn new(design: &DesignMatrix, weights: Option<&[f64]>, beta: f64) -> Result<Self> {
        let n = design.n();
        let q = design.q();
        let pf = design.ncols() - q;
        let nf = n as f64;
        let direct_cost = (n as f64) * (design.ncols() as f64).powi(2) + (design.ncols() as f64).powi(3) / 3.0;
        let woodbury_cost = nf * nf * pf as f64 + nf.powi(3) / 3.0;
        let sqrt_w: Option<Vec<f64>> = weights.map(|w| w.iter().map(|v| (v / nf).sqrt()).collect());
        let scale_rows = |m: DMatrix<f64>| -> DMatrix<f64> {
            let mut m = m;
            match &sqrt_w {
                Some(sw) => {
                    for (i, s) in sw.iter().enumerate() {
                        m.row_mut(i).scale_mut(*s);
                    }
                }
                None => m /= nf.sqrt(),
            }
            m
        };
        let singular = |e: HdfpError| match e {
            HdfpError::Singular(_) if q > 0 => HdfpError::Singular(format!(
                "theta-update system is singular; the baseline block needs n >= q (n = {n}, q = {q})"
            )),
            other => other,
        };

        let factor = if direct_cost <= woodbury_cost || pf == 0 {
            let ws = scale_rows(design.matrix().clone());
            let mut h = ws.tr_mul(&ws);
            for i in q..design.ncols() {
                h[(i, i)] += beta;
            }
            linalg::symmetrize(&mut h);
            AugmentedFactor::Direct(linalg::cholesky_spd(&h, "theta-update system").map_err(singular)?)
        } else {
            let u = scale_rows(design.functional());
            let mut kmat = &u * u.transpose();
            for i in 0..n {
                kmat[(i, i)] += beta;
            }
            linalg::symmetrize(&mut kmat);
            let k = linalg::cholesky_spd(&kmat, "Woodbury kernel")?;
            let baseline = if q > 0 {
                let zs = scale_rows(design.baseline());
                let a = zs.tr_mul(&zs);
                let b = zs.tr_mul(&u);
                let p = woodbury_apply(&u, &k, beta, &b.transpose());
                let mut s = a - &b * &p;
                linalg::symmetrize(&mut s);
                let s_chol = linalg::cholesky_spd(&s, "baseline Schur complement").map_err(singular)?;
                Some((b, p, s_chol))
            } else {
                None
            };
            AugmentedFactor::Woodbury { beta, u, k, baseline }
        };
        Ok(Self { q, factor })
    }

    fn solve(&self, rhs: &DVector<f64>) -> DVector<f64> {
        match &self.factor {
            AugmentedFactor::Direct(c) => c.solve(rhs),
            AugmentedFactor::Woodbury { beta, u, k, baseline } => {
                let q = self.q;
                let r2 = rhs.rows(q, rhs.len() - q).into_owned();
                let t = woodbury_apply(u, k, *beta, &DMatrix::from_column_slice(r2.len(), 1, r2.as_slice()));
                let t = t.column(0).into_owned();
                let mut out = DVector::zeros(rhs.len());
                match baseline {
                    None => out.rows_mut(q, t.len()).copy_from(&t),
                    Some((b, p, s)) => {
                        let r1 = rhs.rows(0, q).into_owned();
                        let alpha = s.solve(&(r1 - b * &t));
                        let gamma = t - p * &alpha;
                        out.rows_mut(0, q).copy_from(&alpha);
                        out.rows_mut(q, gamma.len()).copy_from(&gamma);
                    }
                }
                out
            }
        }
    }
}

/// `(beta I + U^T U)^{-1} X = (X - U^T (beta I + U U^T)^{-1} U X) / beta`.
fn woodbury_apply(u: &DMatrix<f64>, k: &Cholesky<f64, Dyn>, beta: f64, x: &DMatrix<f64>) -> DMatrix<f64> {
    let ux = u * x;
    let inner = k.solve(&ux);
    (x - u.tr_mul(&inner)) / beta
}

/// `D^T v`: zeros on the baseline block, `v` on the functional blocks.
fn lift(q: usize, v: &DVector<f64>) -> DVector<f64> {
    let mut out = DVector::zeros(q + v.len());
    out.rows_mut(q, v.len()).copy_from(v);
    out
}

fn functional_part(theta: &DVector<f64>, q: usize) -> DVector<f64> {
    theta.rows(q, theta.len() - q).into_owned()
}

/// Value of the augmented `theta`-objective.
fn augmented_objective(
    design: &DesignMatrix,
    y: &DVector<f64>,
    family: Family,
    theta: &DVector<f64>,
    g: &DVector<f64>,
    rho: &DVector<f64>,
    beta: f64,
) -> f64 {
    let eta = design.matrix() * theta;
    let r = functional_part(theta, design.q()) - g;
    glm::loss_from_eta(&eta, y, family) - rho.dot(&r) + 0.5 * beta * r.norm_squared()
}

fn augmented_gradient(
    design: &DesignMatrix,
    y: &DVector<f64>,
    family: Family,
    theta: &DVector<f64>,
    g: &DVector<f64>,
    rho: &DVector<f64>,
    beta: f64,
) -> DVector<f64> {
    let eta = design.matrix() * theta;
    let r = functional_part(theta, design.q()) - g;
    glm::gradient_from_eta(design, &eta, y, family) + lift(design.q(), &(r * beta - rho))
}

/// Minimizer of the augmented objective for the given `g` and dual `rho`.
struct ThetaStep<'a> {
    design: &'a DesignMatrix,
    y: &'a DVector<f64>,
    family: Family,
    beta: f64,
    newton_iters: usize,
    newton_tol: f64,
    /// Gaussian: fixed factorization and `W^T y / n`.
    gaussian: Option<(AugmentedSystem, DVector<f64>)>,
}

impl<'a> ThetaStep<'a> {
    fn new(design: &'a DesignMatrix, y: &'a DVector<f64>, family: Family, config: &CprsmConfig) -> Result<Self> {
        ensure!(y.len() == design.n(), DimensionMismatch, "{} outcomes for {} design rows", y.len(), design.n());
        let gaussian = match family {
            Family::Gaussian => {
                let sys = AugmentedSystem::new(design, None, config.pen_beta)?;
                let wty = design.matrix().tr_mul(y) / design.n() as f64;
                Some((sys, wty))
            }
            Family::Logistic => None,
        };
        Ok(Self {
            design,
            y,
            family,
            beta: config.pen_beta,
            newton_iters: config.newton_iters,
            newton_tol: config.newton_tol,
            gaussian,
        })
    }

    fn solve(&self, g: &DVector<f64>, rho: &DVector<f64>, start: &DVector<f64>) -> Result<DVector<f64>> {
        let q = self.design.q();
        if let Some((sys, wty)) = &self.gaussian {
            let rhs = wty + lift(q, &(rho + g * self.beta));
            return Ok(sys.solve(&rhs));
        }
        let mut theta = start.clone();
        let mut obj = augmented_objective(self.design, self.y, self.family, &theta, g, rho, self.beta);
        for _ in 0..self.newton_iters {
            let grad = augmented_gradient(self.design, self.y, self.family, &theta, g, rho, self.beta);
            if grad.norm() <= self.newton_tol {
                break;
            }
            let eta = self.design.matrix() * &theta;
            let w: Vec<f64> = eta.iter().map(|&e| self.family.psi_second(e)).collect();
            let sys = AugmentedSystem::new(self.design, Some(&w), self.beta)?;
            let step = sys.solve(&grad);
            let mut t = 1.0;
            let mut accepted = false;
            for _ in 0..40 {
                let cand = &theta - &step * t;
                let cand_obj = augmented_objective(self.design, self.y, self.family, &cand, g, rho, self.beta);
                if cand_obj <= obj {
                    theta = cand;
                    obj = cand_obj;
                    accepted = true;
                    break;
                }
                t *= 0.5;
            }
            if !accepted {
                break;
            }
        }
        if theta.iter().any(|v| !v.is_finite()) {
            return Err(HdfpError::Numerical("Newton iterations produced non-finite values".into()));
        }
        Ok(theta)
    }
}

/// Solves the `theta`-subproblem given the scaled `Gamma` iterate `g` (`D theta` target)
/// and the dual `rho`.
///
/// Gaussian outcomes give the linear system
/// `(H + beta D^T D) theta = W^T y / n + D^T rho + beta D^T g`; logistic outcomes
/// run damped Newton iterations starting from zero.
pub fn theta_update(
    design: &DesignMatrix,
    y: &DVector<f64>,
    family: Family,
    g: &DVector<f64>,
    rho: &DVector<f64>,
    config: &CprsmConfig,
) -> Result<ThetaVector> {
    let pf = design.ncols() - design.q();
    ensure!(
        g.len() == pf && rho.len() == pf,
        DimensionMismatch,
        "functional vectors must have length {pf}"
    );
    ensure!(config.pen_beta > 0.0, Config, "pen_beta must be positive");
    let step = ThetaStep::new(design, y, family, config)?;
    let theta = step.solve(g, rho, &DVector::zeros(design.ncols()))?;
    ThetaVector::from_vector(design.q(), design.d(), design.n_basis(), theta)
}

/// Euclidean projection of a nonnegative vector onto `{u >= 0 : sum u <= radius}`.
pub fn project_simplex_ball(u: &[f64], radius: f64) -> Vec<f64> {
    let total: f64 = u.iter().sum();
    if total <= radius {
        return u.to_vec();
    }
    let mut sorted = u.to_vec();
    sorted.sort_by(|a, b| b.partial_cmp(a).unwrap_or(std::cmp::Ordering::Equal));
    let mut cumsum = 0.0;
    let mut tau = 0.0;
    for (j, &v) in sorted.iter().enumerate() {
        cumsum += v;
        let t = (cumsum - radius) / (j + 1) as f64;
        if v - t > 0.0 {
            tau = t;
        } else {
            break;
        }
    }
    u.iter().map(|&v| (v - tau).max(0.0)).collect()
}

/// Projects `(|alpha_k|, ||theta_2j||)` onto the l1 ball of radius `radius` and
/// maps the result back: baseline entries keep their signs, each group is
/// rescaled to its projected norm, zero groups stay zero.
pub fn project_feasible(theta: &ThetaVector, radius: f64) -> ThetaVector {
    let (q, d) = (theta.q(), theta.d());
    let mut u: Vec<f64> = theta.alpha().iter().map(|a| a.abs()).collect();
    u.extend((0..d).map(|j| theta.group_norm(j)));
    let proj = project_simplex_ball(&u, radius);
    if proj == u {
        return theta.clone();
    }
    let mut out = theta.clone();
    {
        let v = out.as_vector_mut();
        for k in 0..q {
            v[k] = proj[k].copysign(v[k]);
        }
    }
    for j in 0..d {
        let old = u[q + j];
        let scale = if old > 0.0 { proj[q + j] / old } else { 0.0 };
        out.group_mut(j).iter_mut().for_each(|x| *x *= scale);
    }
    out
}

/// Scaled `Gamma`-update: `v = D theta - rho / beta`, then the group SCAD prox on
/// every group outside `test_set`; tested groups keep `v_j`.
fn gamma_update_scaled(
    theta_functional: &DVector<f64>,
    rho_half: &DVector<f64>,
    penalty: &ScadPenalty,
    unpenalized: &[bool],
    n_basis: usize,
    beta: f64,
) -> Result<DVector<f64>> {
    let mut v = theta_functional - rho_half / beta;
    for (j, &skip) in unpenalized.iter().enumerate() {
        if !skip {
            penalty.group_prox_in_place(&mut v.as_mut_slice()[j * n_basis..(j + 1) * n_basis], beta)?;
        }
    }
    Ok(v)
}

fn membership(d: usize, test_set: &[usize]) -> Result<Vec<bool>> {
    let mut mask = vec![false; d];
    for &j in test_set {
        ensure!(j < d, InvalidArgument, "group index {} outside 1..={d}", j + 1);
        ensure!(!mask[j], InvalidArgument, "group {} listed twice in the tested set", j + 1);
        mask[j] = true;
    }
    Ok(mask)
}

/// `Gamma`-update returning unscaled coefficients (`d x N`).
pub fn gamma_update(
    theta_new: &ThetaVector,
    rho_half: &DVector<f64>,
    penalty: &ScadPenalty,
    test_set: &[usize],
    config: &CprsmConfig,
) -> Result<DMatrix<f64>> {
    config.validate(penalty)?;
    let (d, nb) = (theta_new.d(), theta_new.n_basis());
    ensure!(rho_half.len() == d * nb, DimensionMismatch, "dual has length {}, expected {}", rho_half.len(), d * nb);
    let mask = membership(d, test_set)?;
    let tf = DVector::from_column_slice(theta_new.functional());
    let g = gamma_update_scaled(&tf, rho_half, penalty, &mask, nb, config.pen_beta)?;
    let scale = (nb as f64).sqrt();
    Ok(DMatrix::from_fn(d, nb, |j, k| scale * g[j * nb + k]))
}

/// Builds the design and runs the solver.
pub fn fit(
    dataset: &FunctionalDataset,
    basis: &BSplineBasis,
    family: Family,
    penalty: &ScadPenalty,
    test_set: &[usize],
    config: &CprsmConfig,
    init: Option<&ThetaVector>,
) -> Result<FitResult> {
    let design = DesignMatrix::build(dataset, basis)?;
    fit_design(&design, dataset.y(), family, penalty, test_set, config, init)
}

/// Runs the solver on a prebuilt design. `test_set` holds 0-based group indices
/// that are left unpenalized.
pub fn fit_design(
    design: &DesignMatrix,
    y: &DVector<f64>,
    family: Family,
    penalty: &ScadPenalty,
    test_set: &[usize],
    config: &CprsmConfig,
    init: Option<&ThetaVector>,
) -> Result<FitResult> {
    config.validate(penalty)?;
    let (q, d, nb) = (design.q(), design.d(), design.n_basis());
    let mask = membership(d, test_set)?;
    let step = ThetaStep::new(design, y, family, config)?;
    let beta = config.pen_beta;
    let relax = config.relax_alpha;

    let (mut theta, mut g, mut rho) = match init {
        None => (DVector::zeros(q + d * nb), DVector::zeros(d * nb), DVector::zeros(d * nb)),
        Some(t) => {
            ensure!(
                t.q() == q && t.d() == d && t.n_basis() == nb,
                DimensionMismatch,
                "initial value layout does not match the design"
            );
            let theta = t.as_vector().clone();
            let eta = design.matrix() * &theta;
            // stationarity of the theta-step at a solution gives rho = D grad L
            let rho = functional_part(&glm::gradient_from_eta(design, &eta, y, family), q);
            (theta, functional_part(&t.as_vector().clone(), q), rho)
        }
    };

    let mut converged = false;
    let mut delta = f64::INFINITY;
    let mut iterations = 0;
    let floor = config.delta_floor;
    for k in 0..config.max_iter {
        iterations = k + 1;
        let half = step.solve(&g, &rho, &theta)?;
        let half = ThetaVector::from_vector(q, d, nb, half)?;
        let theta_new = project_feasible(&half, config.radius).into_vector();
        let dtheta = functional_part(&theta_new, q);
        let rho_half = &rho - (&dtheta - &g) * (relax * beta);
        let g_new = gamma_update_scaled(&dtheta, &rho_half, penalty, &mask, nb, beta)?;
        let resid = &dtheta - &g_new;
        let rho_new = &rho_half - &resid * (relax * beta);

        let d_rho = (&rho_new - &rho).norm() / rho_new.norm().max(floor);
        let d_theta = (&theta_new - &theta).norm() / theta_new.norm().max(floor);
        let d_res = resid.norm() / g_new.norm().max(floor);
        delta = d_rho.max(d_theta).max(d_res);

        theta = theta_new;
        g = g_new;
        rho = rho_new;
        if !delta.is_finite() {
            return Err(HdfpError::Numerical(format!("solver diverged at iteration {iterations}")));
        }
        if delta < config.tol {
            converged = true;
            break;
        }
    }

    let primal_residual = (functional_part(&theta, q) - &g).norm();
    let mut hat = theta.clone();
    hat.rows_mut(q, d * nb).copy_from(&g);
    let mut theta_hat = ThetaVector::from_vector(q, d, nb, hat)?;
    let mut active_set = Vec::new();
    for j in 0..d {
        if mask[j] {
            continue;
        }
        if theta_hat.group_norm(j) <= config.support_threshold {
            theta_hat.group_mut(j).iter_mut().for_each(|x| *x = 0.0);
        } else {
            active_set.push(j);
        }
    }
    if let Some(alpha) = polish_baseline(design, y, family, &theta_hat, config) {
        let mut polished = theta_hat.clone();
        polished.as_vector_mut().rows_mut(0, q).copy_from(&alpha);
        if polished.mixed_norm() <= config.radius {
            theta_hat = polished;
        }
    }
    let pen: f64 = (0..d)
        .filter(|&j| !mask[j])
        .map(|j| penalty.rho_unchecked(theta_hat.group_norm(j)))
        .sum();
    let objective = glm::loss(design, y, family, &theta_hat)? + pen;
    Ok(FitResult {
        gamma_hat: theta_hat.gamma(),
        theta_hat,
        active_set,
        iterations,
        converged,
        final_delta: delta,
        objective,
        primal_residual,
    })
}

/// Unpenalized baseline effects given the reported functional blocks:
/// least squares on `Z` for gaussian outcomes, damped Newton for logistic ones.
/// `None` when there is no baseline block or its information is singular.
fn polish_baseline(design: &DesignMatrix, y: &DVector<f64>, family: Family, theta: &ThetaVector, config: &CprsmConfig) -> Option<DVector<f64>> {
    let q = design.q();
    if q == 0 {
        return None;
    }
    let z = design.baseline();
    let offset = design.functional() * DVector::from_column_slice(theta.functional());
    let mut alpha = DVector::from_column_slice(theta.alpha());
    match family {
        Family::Gaussian => {
            let chol = Cholesky::new(z.tr_mul(&z))?;
            Some(chol.solve(&z.tr_mul(&(y - &offset))))
        }
        Family::Logistic => {
            let n = design.n() as f64;
            let loss = |a: &DVector<f64>| glm::loss_from_eta(&(&z * a + &offset), y, family);
            for _ in 0..config.newton_iters {
                let eta = &z * &alpha + &offset;
                let resid = eta.zip_map(y, |e, yi| family.psi_prime(e) - yi);
                let grad = z.tr_mul(&resid) / n;
                if grad.norm() <= config.newton_tol {
                    break;
                }
                let weights: Vec<f64> = eta.iter().map(|&e| family.psi_second(e)).collect();
                let h = linalg::weighted_gram(&z, Some(&weights)) / n;
                let step = Cholesky::new(h)?.solve(&grad);
                let current = loss(&alpha);
                let mut t = 1.0;
                while t > 1e-10 && loss(&(&alpha - &step * t)) > current {
                    t *= 0.5;
                }
                alpha -= step * t;
            }
            alpha.iter().all(|v| v.is_finite()).then_some(alpha)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_design(rng: &mut ChaCha8Rng, n: usize, q: usize, d: usize, nb: usize) -> DesignMatrix {
        let w = DMatrix::from_fn(n, q + d * nb, |_, _| rng.random_range(-1.0..1.0));
        DesignMatrix::from_parts(w, q, d, nb).unwrap()
    }

    #[test]
    fn woodbury_and_direct_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for (n, q) in [(8, 0), (8, 2), (40, 2)] {
            let design = random_design(&mut rng, n, q, 6, 4);
            let w: Vec<f64> = (0..n).map(|_| rng.random_range(0.1..0.3)).collect();
            let sys = AugmentedSystem::new(&design, Some(&w), 1.5).unwrap();
            let mut h = design.matrix().transpose() * DMatrix::from_diagonal(&DVector::from_vec(w.clone())) * design.matrix()
                / n as f64;
            for i in q..design.ncols() {
                h[(i, i)] += 1.5;
            }
            let rhs = DVector::from_fn(design.ncols(), |_, _| rng.random_range(-1.0..1.0));
            let x = sys.solve(&rhs);
            assert!((h * x - rhs).norm() < 1e-10);
        }
    }

    #[test]
    fn simplex_ball_projection() {
        assert_eq!(project_simplex_ball(&[0.2, 0.3], 1.0), vec![0.2, 0.3]);
        let p = project_simplex_ball(&[3.0, 1.0, 0.0], 1.0);
        assert_abs_diff_eq!(p[0], 1.0, epsilon = 1e-15);
        assert_eq!(p[1], 0.0);
        let p = project_simplex_ball(&[1.0, 1.0], 1.0);
        assert_abs_diff_eq!(p[0], 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(p[1], 0.5, epsilon = 1e-15);
    }

    #[test]
    fn projection_fixes_interior_and_zero() {
        let zero = ThetaVector::zeros(2, 3, 2);
        assert_eq!(project_feasible(&zero, 1.0), zero);
        let t = ThetaVector::from_vector(1, 1, 2, DVector::from_vec(vec![0.1, 0.2, 0.2])).unwrap();
        assert_eq!(project_feasible(&t, 1.0), t);
    }

    #[test]
    fn config_validation() {
        let p = ScadPenalty::with_lambda(0.1).unwrap();
        assert!(CprsmConfig::default().validate(&p).is_ok());
        let bad = CprsmConfig { relax_alpha: 1.0, ..Default::default() };
        assert!(bad.validate(&p).is_err());
        let bad = CprsmConfig { pen_beta: 0.3, ..Default::default() };
        assert!(bad.validate(&p).is_err());
    }

    #[test]
    fn gamma_update_identity_without_penalty() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let v = DVector::from_fn(1 + 3 * 4, |_, _| rng.random_range(-1.0..1.0));
        let theta = ThetaVector::from_vector(1, 3, 4, v).unwrap();
        let rho = DVector::from_fn(12, |_, _| rng.random_range(-1.0..1.0));
        let cfg = CprsmConfig::default();
        let pen = ScadPenalty::with_lambda(0.0).unwrap();
        let gam = gamma_update(&theta, &rho, &pen, &[], &cfg).unwrap();
        for j in 0..3 {
            for k in 0..4 {
                let expect = 2.0 * (theta.group(j)[k] - rho[j * 4 + k] / cfg.pen_beta);
                assert_abs_diff_eq!(gam[(j, k)], expect, epsilon = 1e-14);
            }
        }
    }

    #[test]
    fn gamma_update_huge_lambda_keeps_tested_groups() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let v = DVector::from_fn(3 * 4, |_, _| rng.random_range(-1.0..1.0));
        let theta = ThetaVector::from_vector(0, 3, 4, v).unwrap();
        let rho = DVector::zeros(12);
        let cfg = CprsmConfig::default();
        let pen = ScadPenalty::with_lambda(1e6).unwrap();
        let gam = gamma_update(&theta, &rho, &pen, &[1], &cfg).unwrap();
        for k in 0..4 {
            assert_eq!(gam[(0, k)], 0.0);
            assert_eq!(gam[(2, k)], 0.0);
            assert_abs_diff_eq!(gam[(1, k)], 2.0 * theta.group(1)[k], epsilon = 1e-15);
        }
    }

    #[test]
    fn gamma_update_single_group_is_affine_then_prox() {
        let theta = ThetaVector::from_vector(0, 1, 3, DVector::from_vec(vec![0.9, -0.4, 0.3])).unwrap();
        let rho = DVector::from_vec(vec![0.2, 0.1, -0.3]);
        let cfg = CprsmConfig::default();
        let pen = ScadPenalty::new(0.5, 3.7).unwrap();
        let gam = gamma_update(&theta, &rho, &pen, &[], &cfg).unwrap();
        let v: Vec<f64> = (0..3).map(|k| theta.group(0)[k] - rho[k] / cfg.pen_beta).collect();
        let expect = pen.group_prox(&v, cfg.pen_beta).unwrap();
        for k in 0..3 {
            assert_abs_diff_eq!(gam[(0, k)], 3f64.sqrt() * expect[k], epsilon = 1e-15);
        }
    }

    #[test]
    fn rejects_out_of_range_test_set() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let design = random_design(&mut rng, 10, 1, 2, 3);
        let y = DVector::zeros(10);
        let pen = ScadPenalty::with_lambda(0.1).unwrap();
        let r = fit_design(&design, &y, Family::Gaussian, &pen, &[2], &CprsmConfig::default(), None);
        assert!(matches!(r, Err(HdfpError::InvalidArgument(_))));
    }
}
