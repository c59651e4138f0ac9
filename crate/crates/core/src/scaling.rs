//! Context-extension transforms applied before scoring.
//!
//! Two transforms are provided: rebuilding the frequency schedule with a
//! larger rotary base, and linear position interpolation (dividing position
//! indices by a factor). Other per-frequency schemes can plug in through
//! [`AngleMap`].

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::rotary::{self, RotaryParams};

/// A context-extension choice, as read from the CLI config.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ScalingSpec {
    None,
    NtkRebase { new_base: f64 },
    LinearPi { factor: f64 },
}

impl Default for ScalingSpec {
    fn default() -> Self {
        ScalingSpec::None
    }
}

impl ScalingSpec {
    pub fn validate(&self) -> Result<()> {
        match *self {
            ScalingSpec::None => Ok(()),
            ScalingSpec::NtkRebase { new_base } => {
                if new_base.is_finite() && new_base > 1.0 {
                    Ok(())
                } else {
                    Err(invalid(format!("ntk new_base must be > 1, got {new_base}")))
                }
            }
            ScalingSpec::LinearPi { factor } => {
                if factor.is_finite() && factor >= 1.0 {
                    Ok(())
                } else {
                    Err(invalid(format!("linear PI factor must be >= 1, got {factor}")))
                }
            }
        }
    }

    /// The schedule actually used for scoring.
    pub fn apply_params(&self, params: &RotaryParams) -> Result<RotaryParams> {
        match *self {
            ScalingSpec::NtkRebase { new_base } => ntk_rebase(params, new_base),
            _ => Ok(params.clone()),
        }
    }

    /// The effective (possibly fractional) position fed to the rotations.
    pub fn effective_position(&self, position: f64) -> Result<f64> {
        match *self {
            ScalingSpec::LinearPi { factor } => linear_pi(position, factor),
            _ => Ok(position),
        }
    }

    pub fn effective_positions(&self, positions: &[f64]) -> Result<Vec<f64>> {
        positions.iter().map(|&p| self.effective_position(p)).collect()
    }
}

/// Rebuilds the schedule with `new_base`, keeping the head dimension.
pub fn ntk_rebase(params: &RotaryParams, new_base: f64) -> Result<RotaryParams> {
    if !(new_base.is_finite() && new_base > 1.0) {
        return Err(invalid(format!("ntk new_base must be > 1, got {new_base}")));
    }
    if new_base == params.base() {
        return Ok(params.clone());
    }
    RotaryParams::new(params.head_dim(), new_base)
}

/// Linear position interpolation: `position / factor`.
pub fn linear_pi(position: f64, factor: f64) -> Result<f64> {
    if !(factor.is_finite() && factor >= 1.0) {
        return Err(invalid(format!("linear PI factor must be >= 1, got {factor}")));
    }
    Ok(position / factor)
}

/// Per-frequency remap `(n, θₙ, position) → angle`.
///
/// Extension point for schemes such as YaRN that treat frequency bands
/// differently.
pub trait AngleMap: Send + Sync {
    fn angle(&self, n: usize, theta: f64, position: f64) -> f64;
}

/// Plain `θₙ · position`.
#[derive(Debug, Clone, Copy, Default)]
pub struct IdentityMap;

impl AngleMap for IdentityMap {
    fn angle(&self, _n: usize, theta: f64, position: f64) -> f64 {
        theta * position
    }
}

/// `θₙ · position / factor` for every band.
#[derive(Debug, Clone, Copy)]
pub struct LinearPiMap {
    pub factor: f64,
}

impl AngleMap for LinearPiMap {
    fn angle(&self, _n: usize, theta: f64, position: f64) -> f64 {
        theta * (position / self.factor)
    }
}

/// Rotates `values` in place using an arbitrary angle map.
pub fn rotate_with_map(
    values: &mut [f64],
    position: f64,
    params: &RotaryParams,
    map: &dyn AngleMap,
) -> Result<()> {
    params.check_len(values.len(), "vector")?;
    for (n, (pair, &theta)) in values.chunks_exact_mut(2).zip(params.thetas()).enumerate() {
        let (sin, cos) = rotary::angle_sin_cos(1.0, map.angle(n, theta, position));
        let (x, y) = (pair[0], pair[1]);
        pair[0] = x * cos - y * sin;
        pair[1] = x * sin + y * cos;
    }
    Ok(())
}
