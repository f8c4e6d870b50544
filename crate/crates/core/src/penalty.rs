//! SCAD penalty and its group proximal map.

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};
use crate::linalg;

/// Smoothly clipped absolute deviation penalty `rho_lambda` with shape `a`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScadPenalty {
    lambda: f64,
    a: f64,
}

impl ScadPenalty {
    pub const DEFAULT_A: f64 = 3.7;

    pub fn new(lambda: f64, a: f64) -> Result<Self> {
        ensure!(lambda.is_finite() && lambda >= 0.0, Config, "SCAD lambda must be >= 0, got {lambda}");
        ensure!(a.is_finite() && a > 2.0, Config, "SCAD a must exceed 2, got {a}");
        Ok(Self { lambda, a })
    }

    pub fn with_lambda(lambda: f64) -> Result<Self> {
        Self::new(lambda, Self::DEFAULT_A)
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn a(&self) -> f64 {
        self.a
    }

    /// Weak-convexity constant: `rho(t) + mu t^2 / 2` is convex for `mu = 1 / (a - 1)`.
    pub fn weak_convexity(&self) -> f64 {
        1.0 / (self.a - 1.0)
    }

    /// Penalty value at `t >= 0`.
    pub fn rho(&self, t: f64) -> Result<f64> {
        ensure!(t >= 0.0, InvalidArgument, "SCAD penalty takes a nonnegative argument, got {t}");
        Ok(self.rho_unchecked(t))
    }

    pub(crate) fn rho_unchecked(&self, t: f64) -> f64 {
        let (l, a) = (self.lambda, self.a);
        if t <= l {
            l * t
        } else if t <= a * l {
            (2.0 * a * l * t - t * t - l * l) / (2.0 * (a - 1.0))
        } else {
            l * l * (a + 1.0) / 2.0
        }
    }

    /// Derivative for `t > 0`.
    pub fn rho_prime(&self, t: f64) -> Result<f64> {
        ensure!(t > 0.0, InvalidArgument, "SCAD derivative is defined for t > 0, got {t}");
        let (l, a) = (self.lambda, self.a);
        Ok(if t <= l {
            l
        } else if t <= a * l {
            (a * l - t) / (a - 1.0)
        } else {
            0.0
        })
    }

    /// `argmin_x (beta/2) ||x - v||^2 + rho(||x||)`.
    ///
    /// The minimizer is `v` rescaled to radius
    ///
    /// * `(||v|| - lambda/beta)_+` when `||v|| <= lambda + lambda/beta`,
    /// * `{(a-1) beta ||v|| - a lambda} / (a beta - beta - 1)` when `||v|| <= a lambda`,
    /// * `||v||` otherwise.
    ///
    /// Requires `beta (a - 1) > 1`, which makes the objective strongly convex.
    pub fn group_prox(&self, v: &[f64], beta: f64) -> Result<Vec<f64>> {
        let mut out = v.to_vec();
        self.group_prox_in_place(&mut out, beta)?;
        Ok(out)
    }

    pub fn group_prox_in_place(&self, v: &mut [f64], beta: f64) -> Result<()> {
        ensure!(
            beta.is_finite() && beta > 0.0 && beta * (self.a - 1.0) > 1.0,
            Config,
            "group prox needs beta * (a - 1) > 1 (beta = {beta}, a = {})",
            self.a
        );
        let norm = linalg::norm_slice(v);
        let radius = self.prox_radius(norm, beta);
        if radius == norm {
            return Ok(());
        }
        if radius == 0.0 {
            v.iter_mut().for_each(|x| *x = 0.0);
        } else {
            let s = radius / norm;
            v.iter_mut().for_each(|x| *x *= s);
        }
        Ok(())
    }

    /// Radius of the prox output for an input of norm `norm`.
    pub fn prox_radius(&self, norm: f64, beta: f64) -> f64 {
        let (l, a) = (self.lambda, self.a);
        if l == 0.0 {
            return norm;
        }
        if norm <= l + l / beta {
            (norm - l / beta).max(0.0)
        } else if norm <= a * l {
            let r = ((a - 1.0) * beta * norm - a * l) / (a * beta - beta - 1.0);
            r.min(norm)
        } else {
            norm
        }
    }
}
