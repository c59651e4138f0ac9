//! Sine and cosine integrals.
//!
//! `Si(x) = ∫₀ˣ sin(u)/u du`, `Ci(x) = γ + ln x + ∫₀ˣ (cos u − 1)/u du`.
//!
//! Power series up to |x| = 8. Beyond that both are written through the
//! auxiliary functions `f`, `g`:
//!
//! ```text
//! Si(x) = π/2 − f(x)·cos x − g(x)·sin x
//! Ci(x) =       f(x)·sin x − g(x)·cos x
//! ```
//!
//! with `f + i·g` taken from the continued fraction of `E₁(ix)` for
//! 8 < x < 64 and from the asymptotic series for x ≥ 64.

use std::f64::consts::FRAC_PI_2;

use num_complex::Complex64;

use crate::error::{Error, Result};

const EULER_GAMMA: f64 = 0.577_215_664_901_532_860_6;
const SERIES_LIMIT: f64 = 8.0;
const ASYMPTOTIC_LIMIT: f64 = 64.0;

/// Sine integral. Odd in `x`.
pub fn sine_integral(x: f64) -> f64 {
    if x < 0.0 {
        return -sine_integral(-x);
    }
    if x == 0.0 {
        return 0.0;
    }
    if x <= SERIES_LIMIT {
        return si_series(x);
    }
    let (f, g) = auxiliary(x);
    let (s, c) = x.sin_cos();
    FRAC_PI_2 - f * c - g * s
}

/// Cosine integral for `x > 0`.
pub fn cosine_integral(x: f64) -> Result<f64> {
    if !(x > 0.0) {
        return Err(Error::Domain(format!("Ci is defined for x > 0, got {x}")));
    }
    if x <= SERIES_LIMIT {
        return Ok(ci_series(x));
    }
    let (f, g) = auxiliary(x);
    let (s, c) = x.sin_cos();
    Ok(f * s - g * c)
}

fn si_series(x: f64) -> f64 {
    // Σ (−1)^k x^(2k+1) / ((2k+1)·(2k+1)!)
    let x2 = x * x;
    let mut term = x; // (−1)^k x^(2k+1)/(2k+1)!
    let mut sum = x;
    for k in 1..60 {
        let m = (2 * k) as f64;
        term *= -x2 / (m * (m + 1.0));
        let add = term / (m + 1.0);
        sum += add;
        if add.abs() < 1e-17 * sum.abs() {
            break;
        }
    }
    sum
}

fn ci_series(x: f64) -> f64 {
    // γ + ln x + Σ_{k≥1} (−1)^k x^(2k) / (2k·(2k)!)
    let x2 = x * x;
    let mut term = 1.0; // (−1)^k x^(2k)/(2k)!
    let mut sum = 0.0;
    for k in 1..60 {
        let m = (2 * k) as f64;
        term *= -x2 / ((m - 1.0) * m);
        let add = term / m;
        sum += add;
        if add.abs() < 1e-17 * (1.0 + sum.abs()) {
            break;
        }
    }
    EULER_GAMMA + x.ln() + sum
}

/// `(f(x), g(x))` for x > 8.
fn auxiliary(x: f64) -> (f64, f64) {
    if x >= ASYMPTOTIC_LIMIT {
        auxiliary_asymptotic(x)
    } else {
        auxiliary_continued_fraction(x)
    }
}

fn auxiliary_asymptotic(x: f64) -> (f64, f64) {
    // f ~ (1/x) Σ (−1)^k (2k)!/x^(2k),  g ~ (1/x²) Σ (−1)^k (2k+1)!/x^(2k)
    let inv2 = 1.0 / (x * x);
    let (mut f, mut g) = (1.0, 1.0);
    let (mut tf, mut tg) = (1.0f64, 1.0f64);
    for k in 1..40 {
        let m = (2 * k) as f64;
        let nf = -tf * (m - 1.0) * m * inv2;
        let ng = -tg * m * (m + 1.0) * inv2;
        if nf.abs() > tf.abs() || ng.abs() > tg.abs() {
            break;
        }
        tf = nf;
        tg = ng;
        f += tf;
        g += tg;
        if tf.abs() < 1e-18 && tg.abs() < 1e-18 {
            break;
        }
    }
    (f / x, g * inv2)
}

fn auxiliary_continued_fraction(x: f64) -> (f64, f64) {
    // Modified Lentz on E₁(ix)·e^{ix} = 1/(1+ix− 1/(3+ix− 4/(5+ix− ...)))
    // which equals g(x) − i·f(x).
    let tiny = 1e-300;
    let mut b = Complex64::new(1.0, x);
    let mut c = Complex64::new(1.0 / tiny, 0.0);
    let mut d = b.inv();
    let mut h = d;
    for i in 2..10_000 {
        let a = -((i - 1) * (i - 1)) as f64;
        b += 2.0;
        d = (d * a + b).inv();
        c = b + c.inv() * a;
        let del = c * d;
        h *= del;
        if (del - 1.0).norm() < 1e-16 {
            break;
        }
    }
    (-h.im, h.re)
}
