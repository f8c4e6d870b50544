//! Independent reference implementations used as test oracles.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};

/// Clamped uniform knot vector with `k` interior knots.
pub fn clamped_knots(order: usize, k: usize) -> Vec<f64> {
    let mut t = vec![0.0; order];
    t.extend((1..=k).map(|i| i as f64 / (k + 1) as f64));
    t.extend(std::iter::repeat_n(1.0, order));
    t
}

/// Textbook Cox–de Boor recursion; the last nonempty interval is closed at 1.
pub fn cox_de_boor(t: &[f64], order: usize, i: usize, s: f64) -> f64 {
    if order == 1 {
        let last = t[i + 1] == 1.0 && t[i] < 1.0;
        return if (t[i] <= s && s < t[i + 1]) || (last && s == 1.0) { 1.0 } else { 0.0 };
    }
    let mut v = 0.0;
    let d1 = t[i + order - 1] - t[i];
    if d1 > 0.0 {
        v += (s - t[i]) / d1 * cox_de_boor(t, order - 1, i, s);
    }
    let d2 = t[i + order] - t[i + 1];
    if d2 > 0.0 {
        v += (t[i + order] - s) / d2 * cox_de_boor(t, order - 1, i + 1, s);
    }
    v
}

/// Composite trapezoid rule with `m` equal panels on `[0, 1]`.
pub fn trapezoid(f: impl Fn(f64) -> f64, m: usize) -> f64 {
    let h = 1.0 / m as f64;
    let inner: f64 = (1..m).map(|i| f(i as f64 * h)).sum();
    h * (0.5 * (f(0.0) + f(1.0)) + inner)
}

/// Gauss–Legendre rule by Newton iteration on `P_m`.
pub fn legendre_rule(m: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; m];
    let mut w = vec![0.0; m];
    for i in 0..m {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (m as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, z);
            for k in 2..=m {
                let p2 = ((2 * k - 1) as f64 * z * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            dp = m as f64 * (z * p1 - p0) / (z * z - 1.0);
            let dz = p1 / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        x[i] = z;
        w[i] = 2.0 / ((1.0 - z * z) * dp * dp);
    }
    (x, w)
}

/// Composite Gauss–Legendre quadrature on `[a, b]`.
pub fn integrate(f: impl Fn(f64) -> f64, a: f64, b: f64, panels: usize, nodes: usize) -> f64 {
    let (x, w) = legendre_rule(nodes);
    let h = (b - a) / panels as f64;
    let mut total = 0.0;
    for p in 0..panels {
        let mid = a + (p as f64 + 0.5) * h;
        total += x.iter().zip(&w).map(|(xi, wi)| wi * f(mid + 0.5 * h * xi)).sum::<f64>() * 0.5 * h;
    }
    total
}

/// `ln Gamma(k / 2)` for a positive integer `k`, from factorials.
pub fn ln_gamma_half(k: usize) -> f64 {
    if k % 2 == 0 {
        (1..k / 2).map(|i| (i as f64).ln()).sum()
    } else {
        // Gamma(n + 1/2) = (2n)! sqrt(pi) / (4^n n!)
        let n = (k - 1) / 2;
        let num: f64 = (1..=2 * n).map(|i| (i as f64).ln()).sum();
        let den: f64 = (1..=n).map(|i| (i as f64).ln()).sum::<f64>() + n as f64 * 4f64.ln();
        num - den + 0.5 * std::f64::consts::PI.ln()
    }
}

/// Chi-square cdf by quadrature of the density after `t = u^2`.
pub fn chi2_cdf_quadrature(x: f64, k: usize) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    let lc = 0.5 * k as f64 * 2f64.ln() + ln_gamma_half(k);
    let f = |u: f64| {
        if u <= 0.0 {
            return if k == 1 { 2.0 * (-lc).exp() } else { 0.0 };
        }
        2.0 * ((k as f64 - 1.0) * u.ln() - 0.5 * u * u - lc).exp()
    };
    integrate(f, 0.0, x.sqrt(), 400, 16)
}

/// Central finite-difference gradient.
pub fn fd_gradient(f: impl Fn(&DVector<f64>) -> f64, x: &DVector<f64>, h: f64) -> DVector<f64> {
    DVector::from_fn(x.len(), |i, _| {
        let (mut a, mut b) = (x.clone(), x.clone());
        a[i] += h;
        b[i] -= h;
        (f(&a) - f(&b)) / (2.0 * h)
    })
}

/// Central finite-difference Jacobian of a vector field (column `i` is `d g / d x_i`).
pub fn fd_jacobian(g: impl Fn(&DVector<f64>) -> DVector<f64>, x: &DVector<f64>, h: f64) -> DMatrix<f64> {
    let cols: Vec<DVector<f64>> = (0..x.len())
        .map(|i| {
            let (mut a, mut b) = (x.clone(), x.clone());
            a[i] += h;
            b[i] -= h;
            (g(&a) - g(&b)) / (2.0 * h)
        })
        .collect();
    DMatrix::from_columns(&cols)
}

/// Standard SCAD penalty at `t >= 0`.
pub fn scad(t: f64, lambda: f64, a: f64) -> f64 {
    if t <= lambda {
        lambda * t
    } else if t < a * lambda {
        -(t * t - 2.0 * a * lambda * t + lambda * lambda) / (2.0 * (a - 1.0))
    } else {
        (a + 1.0) * lambda * lambda / 2.0
    }
}

/// Radius minimizing `(beta/2)(r - norm)^2 + scad(r)` by a `10^6`-point grid and
/// golden-section refinement around the best grid point.
pub fn prox_radius_brute(norm: f64, lambda: f64, a: f64, beta: f64) -> f64 {
    let obj = |r: f64| 0.5 * beta * (r - norm).powi(2) + scad(r, lambda, a);
    let m = 1_000_000;
    let h = norm / m as f64;
    let best = (0..=m).min_by(|&i, &j| obj(i as f64 * h).total_cmp(&obj(j as f64 * h))).unwrap();
    let (mut lo, mut hi) = ((best as f64 - 1.0).max(0.0) * h, ((best + 1).min(m)) as f64 * h);
    let g = (5f64.sqrt() - 1.0) / 2.0;
    for _ in 0..100 {
        let (c, d) = (hi - g * (hi - lo), lo + g * (hi - lo));
        if obj(c) < obj(d) {
            hi = d;
        } else {
            lo = c;
        }
    }
    let r = 0.5 * (lo + hi);
    [0.0, r, norm].into_iter().min_by(|x, y| obj(*x).total_cmp(&obj(*y))).unwrap()
}

/// Projection onto `{||alpha||_1 + sum_j ||g_j||_2 <= radius}` by bisection on the
/// KKT multiplier: every coordinate of `alpha` is soft-thresholded and every group
/// norm shrunk by the same `tau`.
pub fn project_mixed_oracle(alpha: &[f64], groups: &[Vec<f64>], radius: f64) -> (Vec<f64>, Vec<Vec<f64>>) {
    let norm = |g: &[f64]| g.iter().map(|v| v * v).sum::<f64>().sqrt();
    let apply = |tau: f64| {
        let a: Vec<f64> = alpha.iter().map(|&v| v.signum() * (v.abs() - tau).max(0.0)).collect();
        let g: Vec<Vec<f64>> = groups
            .iter()
            .map(|g| {
                let n = norm(g);
                let s = if n > 0.0 { (n - tau).max(0.0) / n } else { 0.0 };
                g.iter().map(|v| v * s).collect()
            })
            .collect();
        (a, g)
    };
    let size = |(a, g): &(Vec<f64>, Vec<Vec<f64>>)| a.iter().map(|v| v.abs()).sum::<f64>() + g.iter().map(|g| norm(g)).sum::<f64>();
    if size(&apply(0.0)) <= radius {
        return apply(0.0);
    }
    let (mut lo, mut hi) = (0.0, alpha.iter().map(|v| v.abs()).chain(groups.iter().map(|g| norm(g))).fold(0.0, f64::max));
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if size(&apply(mid)) > radius {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    apply(0.5 * (lo + hi))
}

/// Least squares by SVD.
pub fn least_squares(w: &DMatrix<f64>, y: &DVector<f64>) -> DVector<f64> {
    w.clone().svd(true, true).solve(y, 1e-14).unwrap()
}

/// Logistic maximum likelihood by plain Newton iterations from zero.
pub fn logistic_mle(w: &DMatrix<f64>, y: &DVector<f64>) -> DVector<f64> {
    let mut b = DVector::zeros(w.ncols());
    for _ in 0..100 {
        let eta = w * &b;
        let mu = eta.map(|e| 1.0 / (1.0 + (-e).exp()));
        let grad = w.transpose() * (&mu - y);
        let wts = mu.map(|m| m * (1.0 - m));
        let mut h = w.transpose() * DMatrix::from_diagonal(&wts) * w;
        h = 0.5 * (&h + h.transpose());
        let step = h.cholesky().unwrap().solve(&grad);
        b -= &step;
        if step.norm() < 1e-13 {
            break;
        }
    }
    b
}

/// Kolmogorov–Smirnov distance of a sample from Uniform(0, 1).
pub fn ks_uniform(sample: &[f64]) -> f64 {
    let mut s = sample.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len() as f64;
    s.iter()
        .enumerate()
        .map(|(i, &v)| ((i as f64 + 1.0) / n - v).max(v - i as f64 / n))
        .fold(0.0, f64::max)
}

/// Pearson correlation.
pub fn correlation(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let syy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    sxy / (sxx * syy).sqrt()
}
