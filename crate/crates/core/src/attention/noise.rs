use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::rotary::ScoreKind;

/// Gaussian noise added to pre-softmax logits, split by head kind.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub sigma_real: f64,
    pub sigma_imag: f64,
    pub seed: u64,
}

impl NoiseSpec {
    pub fn new(sigma_real: f64, sigma_imag: f64, seed: u64) -> Result<Self> {
        let spec = Self { sigma_real, sigma_imag, seed };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, s) in [("sigma_real", self.sigma_real), ("sigma_imag", self.sigma_imag)] {
            if !(s.is_finite() && s >= 0.0) {
                return Err(invalid(format!("{name} must be finite and >= 0, got {s}")));
            }
        }
        Ok(())
    }

    pub fn sigma(&self, kind: ScoreKind) -> f64 {
        match kind {
            ScoreKind::Real => self.sigma_real,
            ScoreKind::Imag => self.sigma_imag,
        }
    }

    /// Random stream for one logit row; draws are consumed in key order, one
    /// per key, whether or not the key is masked.
    pub(crate) fn row_rng(&self, head: usize, row: usize) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(((head as u64) << 32) | row as u64);
        rng
    }
}

/// Adds `N(0, σ²)` noise to one row of logits for output head `head`.
///
/// `σ` is chosen by `kind`. Entries equal to `-∞` are masked and left as is.
/// A zero `σ` leaves the row bit-identical.
pub fn inject_noise(
    logits: &mut [f64],
    spec: &NoiseSpec,
    kind: ScoreKind,
    head: usize,
    row: usize,
) -> Result<()> {
    spec.validate()?;
    let sigma = spec.sigma(kind);
    if sigma == 0.0 {
        return Ok(());
    }
    let mut rng = spec.row_rng(head, row);
    for x in logits.iter_mut() {
        let z: f64 = StandardNormal.sample(&mut rng);
        if *x != f64::NEG_INFINITY {
            *x += sigma * z;
        }
    }
    Ok(())
}
