//! Gamma-function based distribution functions: chi-square cdf, survival and
//! quantile, and the standard normal cdf and quantile.

use crate::error::{ensure, Result};

const LANCZOS_G: f64 = 7.0;
const LANCZOS: [f64; 9] = [
    0.999_999_999_999_809_9,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_1,
    -176.615_029_162_140_6,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_572e-6,
    1.505_632_735_149_311_6e-7,
];

/// `ln Gamma(x)` for `x > 0` (Lanczos, g = 7).
pub fn ln_gamma(x: f64) -> f64 {
    if x < 0.5 {
        // reflection
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut acc = LANCZOS[0];
    for (i, c) in LANCZOS.iter().enumerate().skip(1) {
        acc += c / (x + i as f64);
    }
    let t = x + LANCZOS_G + 0.5;
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + acc.ln()
}

/// Regularized incomplete gamma functions `(P(a, x), Q(a, x))`.
pub fn regularized_gamma(a: f64, x: f64) -> (f64, f64) {
    if x <= 0.0 {
        return (0.0, 1.0);
    }
    let log_prefactor = a * x.ln() - x - ln_gamma(a);
    if x < a + 1.0 {
        // series for P
        let mut term = 1.0 / a;
        let mut sum = term;
        let mut ap = a;
        for _ in 0..10_000 {
            ap += 1.0;
            term *= x / ap;
            sum += term;
            if term.abs() < sum.abs() * 1e-17 {
                break;
            }
        }
        let p = (log_prefactor.exp() * sum).min(1.0);
        (p, 1.0 - p)
    } else {
        // modified Lentz continued fraction for Q
        let tiny = 1e-300;
        let mut b = x + 1.0 - a;
        let mut c = 1.0 / tiny;
        let mut d = 1.0 / b;
        let mut h = d;
        for i in 1..10_000 {
            let an = -(i as f64) * (i as f64 - a);
            b += 2.0;
            d = an * d + b;
            if d.abs() < tiny {
                d = tiny;
            }
            c = b + an / c;
            if c.abs() < tiny {
                c = tiny;
            }
            d = 1.0 / d;
            let delta = d * c;
            h *= delta;
            if (delta - 1.0).abs() < 1e-16 {
                break;
            }
        }
        let q = (log_prefactor.exp() * h).min(1.0);
        (1.0 - q, q)
    }
}

fn check_df(df: f64) -> Result<()> {
    ensure!(df.is_finite() && df > 0.0, InvalidArgument, "degrees of freedom must be positive, got {df}");
    Ok(())
}

pub fn chi2_cdf(x: f64, df: f64) -> Result<f64> {
    check_df(df)?;
    ensure!(x >= 0.0, InvalidArgument, "chi-square argument must be nonnegative, got {x}");
    Ok(regularized_gamma(0.5 * df, 0.5 * x).0)
}

/// Upper tail `1 - F(x)`, computed directly for accuracy at small p-values.
pub fn chi2_sf(x: f64, df: f64) -> Result<f64> {
    check_df(df)?;
    ensure!(x >= 0.0, InvalidArgument, "chi-square argument must be nonnegative, got {x}");
    Ok(regularized_gamma(0.5 * df, 0.5 * x).1)
}

pub fn chi2_pdf(x: f64, df: f64) -> f64 {
    if x <= 0.0 {
        return if df == 2.0 { 0.5 } else { 0.0 };
    }
    let k = 0.5 * df;
    ((k - 1.0) * x.ln() - 0.5 * x - k * std::f64::consts::LN_2 - ln_gamma(k)).exp()
}

/// Quantile of the chi-square distribution by safeguarded Newton on the cdf.
pub fn chi2_quantile(p: f64, df: f64) -> Result<f64> {
    check_df(df)?;
    ensure!(p > 0.0 && p < 1.0, InvalidArgument, "probability must lie in (0, 1), got {p}");
    // Wilson–Hilferty starting point
    let z = normal_quantile(p)?;
    let h = 2.0 / (9.0 * df);
    let mut x = (df * (1.0 - h + z * h.sqrt()).powi(3)).max(1e-8);
    let (mut lo, mut hi) = (0.0, x.max(1.0));
    while chi2_cdf(hi, df)? < p {
        lo = hi;
        hi *= 2.0;
    }
    if x <= lo || x >= hi {
        x = 0.5 * (lo + hi);
    }
    for _ in 0..200 {
        let f = chi2_cdf(x, df)? - p;
        if f == 0.0 {
            return Ok(x);
        }
        if f < 0.0 {
            lo = x;
        } else {
            hi = x;
        }
        let dens = chi2_pdf(x, df);
        let mut next = if dens > 0.0 { x - f / dens } else { f64::NAN };
        if !(next > lo && next < hi) {
            next = 0.5 * (lo + hi);
        }
        if (next - x).abs() <= 1e-15 * x.max(1e-300) || hi - lo <= 1e-15 * hi {
            return Ok(next);
        }
        x = next;
    }
    Ok(x)
}

/// `erfc(x)` through `Q(1/2, x^2)`.
pub fn erfc(x: f64) -> f64 {
    if x >= 0.0 {
        regularized_gamma(0.5, x * x).1
    } else {
        1.0 + regularized_gamma(0.5, x * x).0
    }
}

pub fn normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

pub fn normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// Standard normal quantile: Acklam's rational approximation followed by a
/// Halley refinement against [`normal_cdf`].
pub fn normal_quantile(p: f64) -> Result<f64> {
    ensure!(p > 0.0 && p < 1.0, InvalidArgument, "probability must lie in (0, 1), got {p}");
    if p == 0.5 {
        return Ok(0.0);
    }
    const A: [f64; 6] = [
        -3.969_683_028_665_376e1,
        2.209_460_984_245_205e2,
        -2.759_285_104_469_687e2,
        1.383_577_518_672_69e2,
        -3.066_479_806_614_716e1,
        2.506_628_277_459_239,
    ];
    const B: [f64; 5] = [
        -5.447_609_879_822_406e1,
        1.615_858_368_580_409e2,
        -1.556_989_798_598_866e2,
        6.680_131_188_771_972e1,
        -1.328_068_155_288_572e1,
    ];
    const C: [f64; 6] = [
        -7.784_894_002_430_293e-3,
        -3.223_964_580_411_365e-1,
        -2.400_758_277_161_838,
        -2.549_732_539_343_734,
        4.374_664_141_464_968,
        2.938_163_982_698_783,
    ];
    const D: [f64; 4] = [
        7.784_695_709_041_462e-3,
        3.224_671_290_700_398e-1,
        2.445_134_137_142_996,
        3.754_408_661_907_416,
    ];
    let p_low = 0.02425;
    let mut x = if p < p_low {
        let q = (-2.0 * p.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else if p <= 1.0 - p_low {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        let q = (-2.0 * (1.0 - p).ln()).sqrt();
        -(((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    };
    for _ in 0..2 {
        let e = normal_cdf(x) - p;
        let u = e / normal_pdf(x);
        x -= u / (1.0 + 0.5 * x * u);
    }
    Ok(x)
}
