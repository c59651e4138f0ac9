//! Rotary position embeddings (RoPE) and their imaginary extension (RoPE++).
//!
//! The crate is split by concern:
//!
//! * [`rotary`]: frequency schedules, pairwise rotations and the real /
//!   imaginary attention scores in relative, absolute and complex form.
//! * [`attention`]: a single grouped-query attention block supporting the
//!   RoPE, EH and EC head layouts, with optional score noise.
//! * [`analysis`]: characteristic curves, Si/Ci, Monte-Carlo expectation
//!   checks and the positional coverage map.
//! * [`scaling`]: rotary-base rescaling and linear position interpolation.
//! * [`accounting`]: KV-cache / parameter / FLOP budgets and a decode
//!   micro-benchmark.

pub mod accounting;
pub mod analysis;
pub mod attention;
pub mod error;
pub mod rotary;
pub mod scaling;

pub use error::{Error, Result};
pub use rotary::{PairVector, RotaryParams, ScoreKind, ScorePair};

/// Layout variant for the attention heads.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    /// Standard RoPE: real scores only.
    Rope,
    /// RoPE++ with equal head count: half the physical query and KV heads.
    Eh,
    /// RoPE++ with equal cache: doubled output heads.
    Ec,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::Rope, Variant::Eh, Variant::Ec];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Rope => "rope",
            Variant::Eh => "eh",
            Variant::Ec => "ec",
        }
    }

    /// Whether the layout carries imaginary heads.
    pub fn has_imaginary(self) -> bool {
        !matches!(self, Variant::Rope)
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "rope" => Ok(Variant::Rope),
            "eh" => Ok(Variant::Eh),
            "ec" => Ok(Variant::Ec),
            other => Err(error::invalid(format!("unknown variant '{other}' (expected rope, eh or ec)"))),
        }
    }
}
