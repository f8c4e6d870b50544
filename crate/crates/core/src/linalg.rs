//! Small dense helpers shared by the solver and the inference code.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{HdfpError, Result};

const JITTER: f64 = 1e-12;

/// Cholesky factorization of a symmetric positive definite matrix.
///
/// A failed factorization is retried once with `1e-12 * max(1, mean diagonal)`
/// added to the diagonal; a second failure is reported as singular.
pub fn cholesky_spd(m: &DMatrix<f64>, what: &str) -> Result<Cholesky<f64, Dyn>> {
    if let Some(c) = Cholesky::new(m.clone()) {
        return Ok(c);
    }
    let n = m.nrows().max(1);
    let scale = (m.diagonal().sum() / n as f64).abs().max(1.0);
    let mut jittered = m.clone();
    for i in 0..m.nrows() {
        jittered[(i, i)] += JITTER * scale;
    }
    Cholesky::new(jittered).ok_or_else(|| HdfpError::Singular(format!("{what} is not positive definite")))
}

/// Symmetrize in place: `m <- (m + m^T) / 2`.
pub fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

/// Ratio of the largest to the smallest eigenvalue of a symmetric matrix.
/// Returns infinity when the smallest eigenvalue is not positive.
pub fn condition_number_sym(m: &DMatrix<f64>) -> f64 {
    let eig = m.clone().symmetric_eigen();
    let max = eig.eigenvalues.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
    if min <= 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// `X^T diag(w) X` for a tall matrix `X`, exploiting symmetry of the result.
pub fn weighted_gram(x: &DMatrix<f64>, w: Option<&[f64]>) -> DMatrix<f64> {
    match w {
        None => x.tr_mul(x),
        Some(w) => {
            let mut xw = x.clone();
            for (i, &wi) in w.iter().enumerate() {
                let s = wi.sqrt();
                xw.row_mut(i).scale_mut(s);
            }
            xw.tr_mul(&xw)
        }
    }
}

pub fn l2(v: &DVector<f64>) -> f64 {
    v.norm()
}

pub fn norm_slice(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}
