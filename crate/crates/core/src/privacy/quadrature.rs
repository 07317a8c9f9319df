//! Numerical-integration estimate of the sampled Gaussian mechanism's Rényi
//! divergence, independent of the closed-form sum. Accepts real orders.
//!
//! With `mu0 = N(0, sigma^2)` and `L(z) = exp((2z - 1) / (2 sigma^2))`,
//! `A = E_{z ~ mu0}[((1 - q) + q L(z))^alpha]` is integrated as
//! `1 + int mu0(z) ((1 + q (L(z) - 1))^alpha - 1) dz` with adaptive
//! Gauss-Kronrod (7, 15) quadrature in a rescaled frame.

use crate::error::{Error, Result};

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_728,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

fn gk15(f: &impl Fn(f64) -> f64, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut kronrod = WGK[7] * fc;
    let mut gauss = WG[3] * fc;
    for j in 0..7 {
        let x = h * XGK[j];
        let s = f(c - x) + f(c + x);
        kronrod += WGK[j] * s;
        if j % 2 == 1 {
            gauss += WG[j / 2] * s;
        }
    }
    (kronrod * h, ((kronrod - gauss) * h).abs())
}

/// Adaptive integral of `f` over `[a, b]` to relative tolerance `rel_tol`.
pub fn integrate(f: impl Fn(f64) -> f64, a: f64, b: f64, rel_tol: f64) -> Result<f64> {
    const START: usize = 64;
    const MAX_INTERVALS: usize = 50_000;
    let width = (b - a) / START as f64;
    let mut parts: Vec<(f64, f64, f64, f64)> = (0..START)
        .map(|i| {
            let (lo, hi) = (a + i as f64 * width, a + (i + 1) as f64 * width);
            let (v, e) = gk15(&f, lo, hi);
            (lo, hi, v, e)
        })
        .collect();
    loop {
        let total: f64 = parts.iter().map(|p| p.2).sum();
        let err: f64 = parts.iter().map(|p| p.3).sum();
        if !total.is_finite() {
            return Err(Error::Quadrature(format!("non-finite integral over [{a}, {b}]")));
        }
        if err <= rel_tol * total.abs() || err < 1e-300 {
            return Ok(total);
        }
        if parts.len() >= MAX_INTERVALS {
            return Err(Error::Quadrature(format!(
                "error estimate {err:e} above tolerance after {MAX_INTERVALS} intervals"
            )));
        }
        let worst = parts
            .iter()
            .enumerate()
            .max_by(|x, y| x.1 .3.total_cmp(&y.1 .3))
            .map(|(i, _)| i)
            .unwrap_or(0);
        let (lo, hi, _, _) = parts.swap_remove(worst);
        let mid = 0.5 * (lo + hi);
        let (v1, e1) = gk15(&f, lo, mid);
        let (v2, e2) = gk15(&f, mid, hi);
        parts.push((lo, mid, v1, e1));
        parts.push((mid, hi, v2, e2));
    }
}

/// `ln(1 - q + q e^u)` without overflow.
fn ln_mixture(q: f64, u: f64) -> f64 {
    if u > 0.0 {
        u + (q + (1.0 - q) * (-u).exp()).ln()
    } else {
        (q * u.exp_m1()).ln_1p()
    }
}

/// RDP of the sampled Gaussian mechanism at real order `alpha > 1`, by
/// quadrature.
pub fn rdp_sgm_quadrature(q: f64, sigma: f64, alpha: f64) -> Result<f64> {
    if !(alpha > 1.0) || !(0.0..=1.0).contains(&q) || !(sigma > 0.0) {
        return Err(Error::Config(format!(
            "need alpha > 1, q in [0, 1], sigma > 0 (got {alpha}, {q}, {sigma})"
        )));
    }
    if q == 0.0 {
        return Ok(0.0);
    }
    let s2 = sigma * sigma;
    let ln_mu0 = |z: f64| -z * z / (2.0 * s2) - (sigma * (2.0 * std::f64::consts::PI).sqrt()).ln();
    let exponent = |z: f64| alpha * ln_mixture(q, (2.0 * z - 1.0) / (2.0 * s2));
    let (lo, hi) = (-40.0 * sigma - 1.0, alpha + 40.0 * sigma + 1.0);

    let shift = (0..=4000)
        .map(|i| {
            let z = lo + (hi - lo) * f64::from(i) / 4000.0;
            ln_mu0(z) + exponent(z).max(0.0)
        })
        .fold(0.0f64, f64::max);
    let integrand = |z: f64| {
        let base = ln_mu0(z) - shift;
        let x = exponent(z);
        if x < 700.0 {
            base.exp() * x.exp_m1()
        } else {
            (base + x).exp() - base.exp()
        }
    };
    let scaled = integrate(integrand, lo, hi, 1e-10)?;
    let ln_a = if shift < 600.0 {
        (shift.exp() * scaled).ln_1p()
    } else {
        shift + (scaled + (-shift).exp()).ln()
    };
    if !ln_a.is_finite() {
        return Err(Error::Quadrature(format!("log moment is {ln_a}")));
    }
    Ok(ln_a.max(0.0) / (alpha - 1.0))
}
