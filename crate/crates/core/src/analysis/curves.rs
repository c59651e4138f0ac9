//! Characteristic curves: the average of `cos(θΔt)` / `sin(θΔt)` over the
//! rotary frequency schedule, and their integral (Ci / Si) approximations.
//!
//! For head dimension `d` the default schedule is `θₙ = 10^(−8n/d)`
//! (base 10000). The discrete curves are
//!
//! ```text
//! c_re(Δt) = (2/d) Σₙ cos(θₙ Δt)      c_im(Δt) = (2/d) Σₙ sin(θₙ Δt)
//! ```
//!
//! Treating `ln θ` as uniform on `[ln 10⁻⁴, 0]` gives the integral forms
//!
//! ```text
//! c̃_re(Δt) = [Ci(Δt) − Ci(Δt/10⁴)] / ln 10⁴
//! c̃_im(Δt) = [Si(Δt) − Si(Δt/10⁴)] / ln 10⁴
//! ```
//!
//! The `1/ln 10⁴` factor keeps them on the same scale as the discrete
//! averages (both bounded by 1).

use std::io::Write;

use serde::{Deserialize, Serialize};

use super::special::{cosine_integral, sine_integral};
use crate::error::{invalid, Error, Result};
use crate::rotary::{angle_sin_cos, RotaryParams};

pub const CURVES_SCHEMA: &str = "ropepp.curves.v1";
pub const CURVE_BASE: f64 = 10_000.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CurveKind {
    RealDiscrete,
    ImagDiscrete,
    RealIntegral,
    ImagIntegral,
}

impl CurveKind {
    pub const ALL: [CurveKind; 4] = [
        CurveKind::RealDiscrete,
        CurveKind::ImagDiscrete,
        CurveKind::RealIntegral,
        CurveKind::ImagIntegral,
    ];

    pub fn name(self) -> &'static str {
        match self {
            CurveKind::RealDiscrete => "real_discrete",
            CurveKind::ImagDiscrete => "imag_discrete",
            CurveKind::RealIntegral => "real_integral",
            CurveKind::ImagIntegral => "imag_integral",
        }
    }
}

impl std::str::FromStr for CurveKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "real" | "real_discrete" => Ok(CurveKind::RealDiscrete),
            "imag" | "imag_discrete" => Ok(CurveKind::ImagDiscrete),
            "real_integral" => Ok(CurveKind::RealIntegral),
            "imag_integral" => Ok(CurveKind::ImagIntegral),
            other => Err(invalid(format!("unknown curve kind '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurveSample {
    pub delta_t: f64,
    pub kind: CurveKind,
    pub value: f64,
}

fn check_d(d: usize) -> Result<()> {
    if d < 2 || d % 2 != 0 {
        return Err(invalid(format!("d must be even and >= 2, got {d}")));
    }
    Ok(())
}

fn check_delta(delta_t: f64) -> Result<()> {
    if !(delta_t.is_finite() && delta_t >= 0.0) {
        return Err(invalid(format!("delta_t must be finite and >= 0, got {delta_t}")));
    }
    Ok(())
}

fn default_thetas(d: usize) -> impl Iterator<Item = f64> {
    (0..d / 2).map(move |n| 10f64.powf(-8.0 * n as f64 / d as f64))
}

/// `(2/d) Σ cos(10^(−8n/d) Δt)`.
pub fn char_curve_real(d: usize, delta_t: f64) -> Result<f64> {
    check_d(d)?;
    check_delta(delta_t)?;
    let sum: f64 = default_thetas(d).map(|th| angle_sin_cos(th, delta_t).1).sum();
    Ok(sum * 2.0 / d as f64)
}

/// `(2/d) Σ sin(10^(−8n/d) Δt)`.
pub fn char_curve_imag(d: usize, delta_t: f64) -> Result<f64> {
    check_d(d)?;
    check_delta(delta_t)?;
    let sum: f64 = default_thetas(d).map(|th| angle_sin_cos(th, delta_t).0).sum();
    Ok(sum * 2.0 / d as f64)
}

/// Discrete curve over an arbitrary schedule (e.g. a rebased one).
pub fn char_curve_with(params: &RotaryParams, kind: crate::rotary::ScoreKind, delta_t: f64) -> Result<f64> {
    check_delta(delta_t)?;
    let sum: f64 = params
        .thetas()
        .iter()
        .map(|&th| {
            let (s, c) = angle_sin_cos(th, delta_t);
            match kind {
                crate::rotary::ScoreKind::Real => c,
                crate::rotary::ScoreKind::Imag => s,
            }
        })
        .sum();
    Ok(sum / params.num_pairs() as f64)
}

/// Normalized integral form; see the module docs.
pub fn integral_curve(kind: crate::rotary::ScoreKind, delta_t: f64) -> Result<f64> {
    use crate::rotary::ScoreKind;
    let norm = CURVE_BASE.ln();
    let lo = delta_t / CURVE_BASE;
    match kind {
        ScoreKind::Real => {
            if !(delta_t > 0.0 && delta_t.is_finite()) {
                return Err(Error::Domain(format!(
                    "real integral curve needs delta_t > 0, got {delta_t}"
                )));
            }
            Ok((cosine_integral(delta_t)? - cosine_integral(lo)?) / norm)
        }
        ScoreKind::Imag => {
            check_delta(delta_t)?;
            Ok((sine_integral(delta_t) - sine_integral(lo)) / norm)
        }
    }
}

/// Evaluates one curve kind at `delta_t`.
pub fn evaluate(kind: CurveKind, d: usize, delta_t: f64) -> Result<f64> {
    use crate::rotary::ScoreKind;
    match kind {
        CurveKind::RealDiscrete => char_curve_real(d, delta_t),
        CurveKind::ImagDiscrete => char_curve_imag(d, delta_t),
        CurveKind::RealIntegral => integral_curve(ScoreKind::Real, delta_t),
        CurveKind::ImagIntegral => integral_curve(ScoreKind::Imag, delta_t),
    }
}

/// `points` log-spaced values from 1 to `max_dt` inclusive, deduplicated.
pub fn log_grid(max_dt: f64, points: usize) -> Result<Vec<f64>> {
    if !(max_dt.is_finite() && max_dt >= 1.0) {
        return Err(invalid(format!("max_dt must be >= 1, got {max_dt}")));
    }
    if points == 0 {
        return Err(invalid("grid needs at least one point"));
    }
    if points == 1 || max_dt == 1.0 {
        return Ok(vec![max_dt]);
    }
    let top = max_dt.log10();
    let mut grid: Vec<f64> = (0..points)
        .map(|i| 10f64.powf(top * i as f64 / (points - 1) as f64))
        .collect();
    grid[points - 1] = max_dt;
    grid.dedup();
    Ok(grid)
}

/// Samples every requested kind on `Δt = 0` plus a log grid up to `max_dt`.
///
/// The real integral form is undefined at `Δt = 0` and is skipped there.
pub fn sample_curves(d: usize, max_dt: f64, points: usize, kinds: &[CurveKind]) -> Result<Vec<CurveSample>> {
    check_d(d)?;
    let mut grid = vec![0.0];
    grid.extend(log_grid(max_dt, points)?);
    let mut out = Vec::new();
    for &kind in kinds {
        for &dt in &grid {
            if dt == 0.0 && kind == CurveKind::RealIntegral {
                continue;
            }
            out.push(CurveSample { delta_t: dt, kind, value: evaluate(kind, d, dt)? });
        }
    }
    Ok(out)
}

/// Writes `# ropepp.curves.v1` followed by `delta_t,kind,value` rows.
pub fn write_curves_csv<W: Write>(mut w: W, samples: &[CurveSample]) -> Result<()> {
    writeln!(w, "# {CURVES_SCHEMA}")?;
    writeln!(w, "delta_t,kind,value")?;
    for s in samples {
        writeln!(w, "{},{},{:.17e}", s.delta_t, s.kind.name(), s.value)?;
    }
    Ok(())
}
