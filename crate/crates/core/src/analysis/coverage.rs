//! Positional coverage: which multiplier values each query/key dimension
//! product sees within a training window.
//!
//! Expanding the scores pair by pair, each product `q_a · k_b` of frequency
//! `n` is multiplied by one sinusoid of `θₙΔt`:
//!
//! | term    | real channel | imaginary channel |
//! |---------|--------------|-------------------|
//! | qe·ke   | `cos`        | `sin`             |
//! | qe·ko   | `sin`        | `−cos`            |
//! | qo·ke   | `−sin`       | `cos`             |
//! | qo·ko   | `cos`        | `sin`             |
//!
//! RoPE trains only the real channel; RoPE++ trains both. The report scans
//! the integer offsets `0..L` and records the attained range per
//! (frequency, term, channel), together with whether a negative value or
//! both extremes `±1` were seen.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::rotary::{angle_sin_cos, RotaryParams, ScoreKind};

pub const COVERAGE_SCHEMA: &str = "ropepp.coverage.v1";
/// A value within this distance of ±1 counts as attaining the extreme.
pub const FULL_RANGE_TOL: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Term {
    QeKe,
    QeKo,
    QoKe,
    QoKo,
}

impl Term {
    pub const ALL: [Term; 4] = [Term::QeKe, Term::QeKo, Term::QoKe, Term::QoKo];

    pub fn name(self) -> &'static str {
        match self {
            Term::QeKe => "qe_ke",
            Term::QeKo => "qe_ko",
            Term::QoKe => "qo_ke",
            Term::QoKo => "qo_ko",
        }
    }

    /// Multiplier of this term in `channel` given `(sin, cos)` of the angle.
    pub fn multiplier(self, channel: ScoreKind, sin: f64, cos: f64) -> f64 {
        match (channel, self) {
            (ScoreKind::Real, Term::QeKe | Term::QoKo) => cos,
            (ScoreKind::Real, Term::QeKo) => sin,
            (ScoreKind::Real, Term::QoKe) => -sin,
            (ScoreKind::Imag, Term::QeKe | Term::QoKo) => sin,
            (ScoreKind::Imag, Term::QeKo) => -cos,
            (ScoreKind::Imag, Term::QoKe) => cos,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CoverageVariant {
    Rope,
    RopePP,
}

impl CoverageVariant {
    pub fn channels(self) -> &'static [ScoreKind] {
        match self {
            CoverageVariant::Rope => &[ScoreKind::Real],
            CoverageVariant::RopePP => &[ScoreKind::Real, ScoreKind::Imag],
        }
    }
}

impl std::str::FromStr for CoverageVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "rope" => Ok(CoverageVariant::Rope),
            "ropepp" | "rope++" | "eh" | "ec" => Ok(CoverageVariant::RopePP),
            other => Err(invalid(format!("unknown coverage variant '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Channel {
    Real,
    Imag,
    /// Both channels together (RoPE++ only).
    Union,
}

impl Channel {
    pub fn name(self) -> &'static str {
        match self {
            Channel::Real => "real",
            Channel::Imag => "imag",
            Channel::Union => "union",
        }
    }
}

/// Attained range of one multiplier over the window.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    fn empty() -> Self {
        Self { lo: f64::INFINITY, hi: f64::NEG_INFINITY }
    }

    fn push(&mut self, v: f64) {
        self.lo = self.lo.min(v);
        self.hi = self.hi.max(v);
    }

    fn hull(self, other: Interval) -> Interval {
        Interval { lo: self.lo.min(other.lo), hi: self.hi.max(other.hi) }
    }

    pub fn contains(&self, other: &Interval) -> bool {
        self.lo <= other.lo && self.hi >= other.hi
    }

    pub fn saw_negative(&self) -> bool {
        self.lo < 0.0
    }

    pub fn saw_full_range(&self) -> bool {
        self.hi >= 1.0 - FULL_RANGE_TOL && self.lo <= -1.0 + FULL_RANGE_TOL
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoverageRow {
    pub n: usize,
    pub theta: f64,
    pub term: Term,
    pub channel: Channel,
    pub interval: Interval,
    pub saw_negative: bool,
    pub saw_full_range: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageReport {
    pub head_dim: usize,
    pub base: f64,
    pub train_len: usize,
    pub variant: CoverageVariant,
    pub rows: Vec<CoverageRow>,
}

impl CoverageReport {
    /// The row describing everything `(n, term)` saw under this variant:
    /// the real row for RoPE, the union row for RoPE++.
    pub fn trained(&self, n: usize, term: Term) -> Option<&CoverageRow> {
        let want = match self.variant {
            CoverageVariant::Rope => Channel::Real,
            CoverageVariant::RopePP => Channel::Union,
        };
        self.rows
            .iter()
            .find(|r| r.n == n && r.term == term && r.channel == want)
    }

    pub fn num_frequencies(&self) -> usize {
        self.head_dim / 2
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "# {COVERAGE_SCHEMA}")?;
        writeln!(w, "n,theta,term,channel,lo,hi,saw_negative,saw_full_range")?;
        for r in &self.rows {
            writeln!(
                w,
                "{},{:.17e},{},{},{:.17e},{:.17e},{},{}",
                r.n,
                r.theta,
                r.term.name(),
                r.channel.name(),
                r.interval.lo,
                r.interval.hi,
                r.saw_negative,
                r.saw_full_range
            )?;
        }
        Ok(())
    }
}

fn row(n: usize, theta: f64, term: Term, channel: Channel, interval: Interval) -> CoverageRow {
    CoverageRow {
        n,
        theta,
        term,
        channel,
        interval,
        saw_negative: interval.saw_negative(),
        saw_full_range: interval.saw_full_range(),
    }
}

/// Scans `Δt ∈ {0, …, L−1}` for every frequency of `params`.
pub fn coverage_map(params: &RotaryParams, train_len: usize, variant: CoverageVariant) -> Result<CoverageReport> {
    if train_len < 2 {
        return Err(invalid(format!("train_len must be >= 2, got {train_len}")));
    }
    let mut rows = Vec::new();
    for (n, &theta) in params.thetas().iter().enumerate() {
        let mut real = [Interval::empty(); 4];
        let mut imag = [Interval::empty(); 4];
        for dt in 0..train_len {
            let (s, c) = angle_sin_cos(theta, dt as f64);
            for (i, term) in Term::ALL.into_iter().enumerate() {
                real[i].push(term.multiplier(ScoreKind::Real, s, c));
                imag[i].push(term.multiplier(ScoreKind::Imag, s, c));
            }
        }
        for (i, term) in Term::ALL.into_iter().enumerate() {
            rows.push(row(n, theta, term, Channel::Real, real[i]));
            if variant == CoverageVariant::RopePP {
                rows.push(row(n, theta, term, Channel::Imag, imag[i]));
                rows.push(row(n, theta, term, Channel::Union, real[i].hull(imag[i])));
            }
        }
    }
    Ok(CoverageReport {
        head_dim: params.head_dim(),
        base: params.base(),
        train_len,
        variant,
        rows,
    })
}

/// Every multiplier value `(n, term)` sees over `0..L` under `variant`.
pub fn attained_values(theta: f64, train_len: usize, term: Term, variant: CoverageVariant) -> Vec<f64> {
    let mut out = Vec::new();
    for &ch in variant.channels() {
        for dt in 0..train_len {
            let (s, c) = angle_sin_cos(theta, dt as f64);
            out.push(term.multiplier(ch, s, c));
        }
    }
    out
}

/// Smallest window `L` (≤ `max_len`) at which `(θ, term)` has attained
/// both extremes under `variant`.
pub fn min_len_for_full_range(theta: f64, term: Term, variant: CoverageVariant, max_len: usize) -> Option<usize> {
    let mut seen = Interval::empty();
    for dt in 0..max_len {
        let (s, c) = angle_sin_cos(theta, dt as f64);
        for &ch in variant.channels() {
            seen.push(term.multiplier(ch, s, c));
        }
        if seen.saw_full_range() {
            return Some(dt + 1);
        }
    }
    None
}
