//! Frequency schedules, pairwise rotations, and real / imaginary scores.
//!
//! A head vector of even length `d` is viewed as `d/2` ordered pairs
//! `(v[2n], v[2n+1])`, each read as the complex number `v[2n] + i·v[2n+1]`.
//! Pair `n` rotates with angular frequency `thetas[n] = base^(-2n/d)`.
//!
//! Two scores are defined for a query `q` at position `t` and a key `k` at
//! position `s`:
//!
//! * the real score, `Re Σ q̃ₙ k̃ₙ* e^{-iθₙ(t-s)}` (standard RoPE),
//! * the imaginary score, the *negative* imaginary part of the same sum.
//!
//! Both are available in relative form (a function of `t - s` only), in
//! absolute form (rotate `q` and `k` separately, then take a dot product;
//! the imaginary score first turns `q` by `-π/2`), and through
//! [`score_complex_oracle`], which evaluates the complex sum directly and
//! shares no arithmetic with the other two.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, shape, Result};

/// Rotary frequency schedule for one head dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RotaryParams {
    head_dim: usize,
    base: f64,
    thetas: Vec<f64>,
}

impl RotaryParams {
    /// `thetas[n] = base^(-2n / head_dim)` for `n < head_dim / 2`.
    pub fn new(head_dim: usize, base: f64) -> Result<Self> {
        if head_dim < 2 || head_dim % 2 != 0 {
            return Err(invalid(format!("head_dim must be even and >= 2, got {head_dim}")));
        }
        if !(base.is_finite() && base > 1.0) {
            return Err(invalid(format!("rotary base must be finite and > 1, got {base}")));
        }
        let d = head_dim as f64;
        let thetas: Vec<f64> = (0..head_dim / 2)
            .map(|n| base.powf(-2.0 * n as f64 / d))
            .collect();
        if thetas.windows(2).any(|w| w[1] >= w[0]) || thetas.iter().any(|&t| t <= 0.0) {
            return Err(invalid(format!(
                "base {base} with head_dim {head_dim} does not give a strictly decreasing positive schedule"
            )));
        }
        Ok(Self { head_dim, base, thetas })
    }

    pub fn head_dim(&self) -> usize {
        self.head_dim
    }

    pub fn base(&self) -> f64 {
        self.base
    }

    pub fn thetas(&self) -> &[f64] {
        &self.thetas
    }

    pub fn num_pairs(&self) -> usize {
        self.thetas.len()
    }

    pub(crate) fn check_len(&self, len: usize, what: &str) -> Result<()> {
        if len != self.head_dim {
            return Err(invalid(format!(
                "{what} has length {len}, expected head_dim {}",
                self.head_dim
            )));
        }
        Ok(())
    }
}

/// Builds the default frequency schedule; see [`RotaryParams::new`].
pub fn build_thetas(head_dim: usize, base: f64) -> Result<RotaryParams> {
    RotaryParams::new(head_dim, base)
}

/// A head vector interpreted as consecutive (re, im) pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct PairVector(Vec<f64>);

impl PairVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.len() % 2 != 0 {
            return Err(invalid(format!("pair vector needs an even length, got {}", values.len())));
        }
        Ok(Self(values))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    /// Euclidean norm of each pair.
    pub fn pair_norms(&self) -> Vec<f64> {
        self.0.chunks_exact(2).map(|p| p[0].hypot(p[1])).collect()
    }

    pub fn dot(&self, other: &PairVector) -> Result<f64> {
        if self.len() != other.len() {
            return Err(shape(format!("dot of lengths {} and {}", self.len(), other.len())));
        }
        Ok(dot(&self.0, &other.0))
    }
}

impl TryFrom<Vec<f64>> for PairVector {
    type Error = crate::Error;

    fn try_from(values: Vec<f64>) -> Result<Self> {
        Self::new(values)
    }
}

impl AsRef<[f64]> for PairVector {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

/// Which attention score component to compute.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScoreKind {
    Real,
    Imag,
}

/// Real and (negative) imaginary score for one query/key pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScorePair {
    pub real: f64,
    /// Negative imaginary part of the complex score.
    pub imag: f64,
}

impl ScorePair {
    pub fn get(&self, kind: ScoreKind) -> f64 {
        match kind {
            ScoreKind::Real => self.real,
            ScoreKind::Imag => self.imag,
        }
    }
}

// 2π split into three parts; the first two carry 33 significant bits so
// k·P1 and k·P2 are exact for |k| < 2^20.
const TWO_PI_1: f64 = 4.0 * 1.570_796_326_734_125_614_17;
const TWO_PI_2: f64 = 4.0 * 6.077_100_506_303_965_976_60e-11;
const TWO_PI_3: f64 = 4.0 * 2.022_266_248_711_166_455_80e-21;
const INV_TWO_PI: f64 = 0.159_154_943_091_895_335_77;

/// `(sin, cos)` of `theta · position`, with the product formed exactly and
/// reduced modulo 2π before evaluation.
///
/// Large positions would otherwise lose ~`position · ε` radians, which breaks
/// shift invariance at offsets around 10⁶.
pub fn angle_sin_cos(theta: f64, position: f64) -> (f64, f64) {
    let hi = theta * position;
    let lo = theta.mul_add(position, -hi);
    let k = (hi * INV_TWO_PI).round();
    if k == 0.0 || k.abs() >= (1u64 << 20) as f64 {
        return (hi + lo).sin_cos();
    }
    let r = ((hi - k * TWO_PI_1) - k * TWO_PI_2) - k * TWO_PI_3 + lo;
    r.sin_cos()
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Rotates every pair of `values` in place by `theta_n · position`.
pub fn rotate_in_place(values: &mut [f64], position: f64, params: &RotaryParams) -> Result<()> {
    params.check_len(values.len(), "vector")?;
    rotate_unchecked(values, position, params.thetas());
    Ok(())
}

pub(crate) fn rotate_unchecked(values: &mut [f64], position: f64, thetas: &[f64]) {
    for (pair, &theta) in values.chunks_exact_mut(2).zip(thetas) {
        let (sin, cos) = angle_sin_cos(theta, position);
        let (x, y) = (pair[0], pair[1]);
        pair[0] = x * cos - y * sin;
        pair[1] = x * sin + y * cos;
    }
}

fn check_position(position: f64) -> Result<()> {
    if !position.is_finite() || position < 0.0 {
        return Err(invalid(format!("positions must be finite and >= 0, got {position}")));
    }
    Ok(())
}

/// Absolute rotary embedding of `v` at `position`.
pub fn apply_absolute(v: &PairVector, position: f64, params: &RotaryParams) -> Result<PairVector> {
    check_position(position)?;
    let mut out = v.0.clone();
    rotate_in_place(&mut out, position, params)?;
    Ok(PairVector(out))
}

/// Turns every pair by `-π/2`: `(x, y) → (y, -x)`.
pub fn rotate_quarter_neg(v: &PairVector) -> PairVector {
    let mut out = v.0.clone();
    quarter_neg_in_place(&mut out);
    PairVector(out)
}

/// Turns every pair by `+π/2`: `(x, y) → (-y, x)`.
pub fn rotate_quarter_pos(v: &PairVector) -> PairVector {
    let mut out = v.0.clone();
    for p in out.chunks_exact_mut(2) {
        let (x, y) = (p[0], p[1]);
        p[0] = -y;
        p[1] = x;
    }
    PairVector(out)
}

pub(crate) fn quarter_neg_in_place(values: &mut [f64]) {
    for p in values.chunks_exact_mut(2) {
        let (x, y) = (p[0], p[1]);
        p[0] = y;
        p[1] = -x;
    }
}

fn check_pair(q: &PairVector, k: &PairVector, params: &RotaryParams) -> Result<()> {
    params.check_len(q.len(), "query")?;
    params.check_len(k.len(), "key")
}

// Per-pair "dot" and "cross" terms shared by both relative forms:
//   dot   = q₀k₀ + q₁k₁
//   cross = q₀k₁ − q₁k₀
fn relative_terms<'a>(
    q: &'a [f64],
    k: &'a [f64],
) -> impl Iterator<Item = (f64, f64)> + 'a {
    q.chunks_exact(2).zip(k.chunks_exact(2)).map(|(qp, kp)| {
        (qp[0] * kp[0] + qp[1] * kp[1], qp[0] * kp[1] - qp[1] * kp[0])
    })
}

/// Real score as a function of the relative offset `delta_t = t - s`.
pub fn score_real_relative(
    q: &PairVector,
    k: &PairVector,
    delta_t: f64,
    params: &RotaryParams,
) -> Result<f64> {
    check_pair(q, k, params)?;
    Ok(relative_terms(&q.0, &k.0)
        .zip(params.thetas())
        .map(|((dot, cross), &theta)| {
            let (sin, cos) = angle_sin_cos(theta, delta_t);
            dot * cos + cross * sin
        })
        .sum())
}

/// Imaginary (negative imaginary part) score as a function of `delta_t = t - s`.
pub fn score_imag_relative(
    q: &PairVector,
    k: &PairVector,
    delta_t: f64,
    params: &RotaryParams,
) -> Result<f64> {
    check_pair(q, k, params)?;
    Ok(relative_terms(&q.0, &k.0)
        .zip(params.thetas())
        .map(|((dot, cross), &theta)| {
            let (sin, cos) = angle_sin_cos(theta, delta_t);
            dot * sin - cross * cos
        })
        .sum())
}

/// Score through absolute embeddings: rotate `q` to `t` and `k` to `s`, then
/// take their dot product. The imaginary score turns `q` by `-π/2` first.
pub fn score_absolute(
    q: &PairVector,
    k: &PairVector,
    t: f64,
    s: f64,
    params: &RotaryParams,
    which: ScoreKind,
) -> Result<f64> {
    check_pair(q, k, params)?;
    let q = match which {
        ScoreKind::Real => q.clone(),
        ScoreKind::Imag => rotate_quarter_neg(q),
    };
    let q_rot = apply_absolute(&q, t, params)?;
    let k_rot = apply_absolute(k, s, params)?;
    Ok(dot(&q_rot.0, &k_rot.0))
}

/// Both score components via explicit complex arithmetic.
///
/// Returns `(Re Σ, -Im Σ)` of `Σₙ q̃ₙ k̃ₙ* e^{-iθₙ(t-s)}` with pair `n` read as
/// `q̃ₙ = q[2n] - i q[2n+1]`, so that multiplying by `e^{-iθt}` is the same
/// counter-clockwise rotation the real-valued paths apply. This is the
/// reference path the rotation-form scorers are checked against.
pub fn score_complex_oracle(
    q: &PairVector,
    k: &PairVector,
    t: f64,
    s: f64,
    params: &RotaryParams,
) -> Result<ScorePair> {
    check_pair(q, k, params)?;
    check_position(t)?;
    check_position(s)?;
    let delta = t - s;
    let mut re = 0.0;
    let mut im = 0.0;
    for (n, &theta) in params.thetas().iter().enumerate() {
        let qc = Complex64::new(q.0[2 * n], -q.0[2 * n + 1]);
        let kc = Complex64::new(k.0[2 * n], -k.0[2 * n + 1]);
        let phase = Complex64::from_polar(1.0, -theta * delta);
        let term = qc * kc.conj() * phase;
        re += term.re;
        im += term.im;
    }
    Ok(ScorePair { real: re, imag: -im })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn pv(v: &[f64]) -> PairVector {
        PairVector::new(v.to_vec()).unwrap()
    }

    fn random_pv(rng: &mut ChaCha8Rng, d: usize) -> PairVector {
        pv(&(0..d).map(|_| rng.gen_range(-1.0..1.0)).collect::<Vec<_>>())
    }

    #[test]
    fn thetas_small_cases() {
        let p = build_thetas(4, 10000.0).unwrap();
        assert_eq!(p.thetas()[0], 1.0);
        assert!((p.thetas()[1] - 0.01).abs() < 1e-17);
        assert_eq!(build_thetas(2, 10000.0).unwrap().thetas(), &[1.0]);
    }

    #[test]
    fn thetas_match_high_precision_pow() {
        // 500000^(-126/128), 40-digit reference
        let want = 2.455_140_791_131_608_871_241_946_966_457e-6;
        let p = build_thetas(128, 500_000.0).unwrap();
        assert!(((p.thetas()[63] - want) / want).abs() < 1e-14);
        assert!(p.thetas().windows(2).all(|w| w[1] < w[0]));
    }

    #[test]
    fn thetas_reject_bad_args() {
        assert!(build_thetas(3, 10000.0).is_err());
        assert!(build_thetas(0, 10000.0).is_err());
        assert!(build_thetas(8, 1.0).is_err());
        assert!(build_thetas(8, 0.5).is_err());
        assert!(build_thetas(8, f64::NAN).is_err());
    }

    #[test]
    fn absolute_rotation_basics() {
        let p = build_thetas(2, 10000.0).unwrap();
        let v = pv(&[0.3, -1.7]);
        assert_eq!(apply_absolute(&v, 0.0, &p).unwrap(), v);
        let r = apply_absolute(&pv(&[1.0, 0.0]), PI / 2.0, &p).unwrap();
        assert!(r.as_slice()[0].abs() < 1e-12 && (r.as_slice()[1] - 1.0).abs() < 1e-12);
        assert!(apply_absolute(&pv(&[1.0, 0.0, 0.0, 0.0]), 1.0, &p).is_err());
        assert!(apply_absolute(&v, -1.0, &p).is_err());
    }

    #[test]
    fn absolute_rotation_preserves_pair_norms() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let p = build_thetas(8, 10000.0).unwrap();
        let v = random_pv(&mut rng, 8);
        let r = apply_absolute(&v, 7.0, &p).unwrap();
        for (a, b) in v.pair_norms().iter().zip(r.pair_norms()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn quarter_turn_rule() {
        assert_eq!(rotate_quarter_neg(&pv(&[1.0, 0.0])), pv(&[0.0, -1.0]));
        assert_eq!(rotate_quarter_neg(&pv(&[0.0, 1.0])), pv(&[1.0, 0.0]));
        assert_eq!(rotate_quarter_neg(&pv(&[2.0, 3.0, -1.0, 5.0])), pv(&[3.0, -2.0, 5.0, 1.0]));
        let v = pv(&[0.1, 0.2, -0.3, 0.4]);
        let four = (0..4).fold(v.clone(), |acc, _| rotate_quarter_neg(&acc));
        assert_eq!(four, v);
        assert_eq!(rotate_quarter_pos(&rotate_quarter_neg(&v)), v);
        assert!(PairVector::new(vec![1.0, 2.0, 3.0]).is_err());
    }

    #[test]
    fn zero_offset_scores() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = build_thetas(8, 10000.0).unwrap();
        let q = random_pv(&mut rng, 8);
        let k = random_pv(&mut rng, 8);
        let real = score_real_relative(&q, &k, 0.0, &p).unwrap();
        assert!((real - q.dot(&k).unwrap()).abs() < 1e-15);
        let imag = score_imag_relative(&q, &k, 0.0, &p).unwrap();
        let q = q.as_slice();
        let k = k.as_slice();
        let want: f64 = (0..4).map(|n| q[2 * n + 1] * k[2 * n] - q[2 * n] * k[2 * n + 1]).sum();
        assert!((imag - want).abs() < 1e-15);
        let qq = pv(q);
        assert_eq!(score_imag_relative(&qq, &qq, 0.0, &p).unwrap(), 0.0);
    }

    #[test]
    fn single_pair_unit_case() {
        let p = build_thetas(2, 10000.0).unwrap();
        let e = pv(&[1.0, 0.0]);
        for dt in [-3.0, 0.5, 2.0, 17.0] {
            assert!((score_real_relative(&e, &e, dt, &p).unwrap() - f64::cos(dt)).abs() < 1e-15);
        }
    }

    #[test]
    fn oracle_small_cases() {
        let p = build_thetas(2, 10000.0).unwrap();
        let q = pv(&[3.0, 4.0]);
        let sp = score_complex_oracle(&q, &q, 5.0, 5.0, &p).unwrap();
        assert_eq!(sp, ScorePair { real: 25.0, imag: 0.0 });
        let sp = score_complex_oracle(&pv(&[1.0, 0.0]), &pv(&[0.0, 1.0]), 2.0, 2.0, &p).unwrap();
        assert_eq!(sp, ScorePair { real: 0.0, imag: -1.0 });
    }

    #[test]
    fn relative_forms_match_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let p = build_thetas(8, 10000.0).unwrap();
        let q = random_pv(&mut rng, 8);
        let k = random_pv(&mut rng, 8);
        let o = score_complex_oracle(&q, &k, 5.0, 0.0, &p).unwrap();
        let re = score_real_relative(&q, &k, 5.0, &p).unwrap();
        let im = score_imag_relative(&q, &k, 5.0, &p).unwrap();
        assert!((re - o.real).abs() <= 1e-10 * o.real.abs().max(1e-300));
        assert!((im - o.imag).abs() <= 1e-10 * o.imag.abs().max(1e-300));
    }

    #[test]
    fn absolute_form_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let p = build_thetas(16, 10000.0).unwrap();
        let q = random_pv(&mut rng, 16);
        let k = random_pv(&mut rng, 16);
        let same = score_absolute(&q, &k, 9.0, 9.0, &p, ScoreKind::Real).unwrap();
        assert!((same - q.dot(&k).unwrap()).abs() < 1e-12);

        let a = score_absolute(&rotate_quarter_pos(&q), &k, 11.0, 3.0, &p, ScoreKind::Imag).unwrap();
        let b = score_absolute(&q, &k, 11.0, 3.0, &p, ScoreKind::Real).unwrap();
        assert!((a - b).abs() < 1e-12);

        for which in [ScoreKind::Real, ScoreKind::Imag] {
            let abs = score_absolute(&q, &k, 11.0, 3.0, &p, which).unwrap();
            let rel = match which {
                ScoreKind::Real => score_real_relative(&q, &k, 8.0, &p).unwrap(),
                ScoreKind::Imag => score_imag_relative(&q, &k, 8.0, &p).unwrap(),
            };
            assert!((abs - rel).abs() <= 1e-10 * (1.0 + rel.abs()));
        }
    }

    #[test]
    fn length_mismatch_is_rejected() {
        let p = build_thetas(4, 10000.0).unwrap();
        let q = pv(&[1.0, 0.0]);
        let k = pv(&[1.0, 0.0, 0.0, 1.0]);
        assert!(score_real_relative(&q, &k, 1.0, &p).is_err());
        assert!(score_imag_relative(&k, &q, 1.0, &p).is_err());
        assert!(score_complex_oracle(&q, &k, 1.0, 0.0, &p).is_err());
        assert!(score_absolute(&q, &k, 1.0, 0.0, &p, ScoreKind::Real).is_err());
    }

    #[test]
    fn reduced_angle_matches_naive_for_small_arguments() {
        for &(theta, pos) in &[(1.0, 3.0), (0.01, 12345.0), (1.0, 1e6), (3e-5, 7.5)] {
            let (s, c) = angle_sin_cos(theta, pos);
            let (s2, c2) = (theta * pos).sin_cos();
            // the naive path is itself off by up to ~pos·ε
            let tol = 1e-15 * (1.0 + theta * pos);
            assert!((s - s2).abs() <= tol && (c - c2).abs() <= tol, "{theta} {pos}");
        }
    }

    #[test]
    fn reduced_angle_is_shift_consistent() {
        // cos(θ(t+c))cos(θ(s+c)) + sin·sin = cos(θ(t−s)) should survive large c
        let theta = 0.7310585786300049;
        let c = 1_000_000.0;
        let (st, ct) = angle_sin_cos(theta, 11.0 + c);
        let (ss, cs) = angle_sin_cos(theta, 3.0 + c);
        let (sd, cd) = angle_sin_cos(theta, 8.0);
        assert!((ct * cs + st * ss - cd).abs() < 1e-14);
        assert!((st * cs - ct * ss - sd).abs() < 1e-14);
    }
}
