//! Monte-Carlo checks of the expectation identities behind semantic
//! aggregation and long-distance decay.
//!
//! With `q`, `k` drawn i.i.d. with per-dimension mean `μ` and variance `σ²`,
//! and a small zero-mean perturbation `ε` independent of `q`:
//!
//! ```text
//! E[A(q, q+ε, Δt) − A(q, k, Δt)] = 2σ²        Σₙ w(θₙΔt)
//! E[A(q, q, Δt)]                 = 2(μ² + σ²) Σₙ w(θₙΔt)
//! ```
//!
//! where `A` is the real score with `w = cos`, or the imaginary score with
//! `w = sin`. Samples are Gaussian; the identities only depend on the first
//! two moments.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::rotary::{angle_sin_cos, RotaryParams, ScoreKind};

pub const MIN_SAMPLES: usize = 10_000;
const SHARD: usize = 4096;
/// Standard deviation of the perturbation, relative to `σ`.
pub const PERTURBATION_SCALE: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Identity {
    /// Similar key minus independent key.
    Aggregation,
    /// Score of a query against itself.
    MeanScore,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McConfig {
    pub variant: ScoreKind,
    pub mu: f64,
    pub sigma: f64,
    pub d: usize,
    pub delta_t: f64,
    pub n_samples: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExpectationCheck {
    pub identity: Identity,
    pub variant: ScoreKind,
    pub mu: f64,
    pub sigma: f64,
    pub d: usize,
    pub delta_t: f64,
    pub closed_form: f64,
    pub mc_estimate: f64,
    pub mc_stderr: f64,
    pub n_samples: usize,
}

impl ExpectationCheck {
    /// `|mc − closed| / stderr`; zero when both the gap and stderr vanish.
    pub fn z_score(&self) -> f64 {
        let gap = (self.mc_estimate - self.closed_form).abs();
        if gap == 0.0 {
            0.0
        } else {
            gap / self.mc_stderr
        }
    }

    pub fn within(&self, n_stderr: f64) -> bool {
        self.z_score() <= n_stderr
    }
}

fn validate(cfg: &McConfig) -> Result<()> {
    if !(cfg.sigma.is_finite() && cfg.sigma > 0.0) {
        return Err(invalid(format!("sigma must be > 0, got {}", cfg.sigma)));
    }
    if !cfg.mu.is_finite() {
        return Err(invalid("mu must be finite"));
    }
    if cfg.n_samples < MIN_SAMPLES {
        return Err(invalid(format!(
            "n_samples must be >= {MIN_SAMPLES}, got {}",
            cfg.n_samples
        )));
    }
    if !(cfg.delta_t.is_finite() && cfg.delta_t >= 0.0) {
        return Err(invalid(format!("delta_t must be >= 0, got {}", cfg.delta_t)));
    }
    Ok(())
}

/// `Σₙ cos(θₙΔt)` or `Σₙ sin(θₙΔt)` for the base-10000 schedule.
pub fn frequency_sum(kind: ScoreKind, d: usize, delta_t: f64) -> Result<f64> {
    let p = RotaryParams::new(d, 10_000.0)?;
    Ok(p.thetas()
        .iter()
        .map(|&th| {
            let (s, c) = angle_sin_cos(th, delta_t);
            match kind {
                ScoreKind::Real => c,
                ScoreKind::Imag => s,
            }
        })
        .sum())
}

pub fn closed_form(identity: Identity, kind: ScoreKind, mu: f64, sigma: f64, d: usize, delta_t: f64) -> Result<f64> {
    let weight = match identity {
        Identity::Aggregation => 2.0 * sigma * sigma,
        Identity::MeanScore => 2.0 * (mu * mu + sigma * sigma),
    };
    Ok(weight * frequency_sum(kind, d, delta_t)?)
}

// Running (count, mean, M2), merged in shard order.
#[derive(Clone, Copy, Default)]
struct Moments {
    n: f64,
    mean: f64,
    m2: f64,
}

impl Moments {
    fn push(&mut self, x: f64) {
        self.n += 1.0;
        let delta = x - self.mean;
        self.mean += delta / self.n;
        self.m2 += delta * (x - self.mean);
    }

    fn merge(self, other: Moments) -> Moments {
        if self.n == 0.0 {
            return other;
        }
        let n = self.n + other.n;
        let delta = other.mean - self.mean;
        Moments {
            n,
            mean: self.mean + delta * other.n / n,
            m2: self.m2 + other.m2 + delta * delta * self.n * other.n / n,
        }
    }
}

/// Relative score on raw slices with precomputed per-pair (sin, cos).
fn score(kind: ScoreKind, q: &[f64], k: &[f64], trig: &[(f64, f64)]) -> f64 {
    q.chunks_exact(2)
        .zip(k.chunks_exact(2))
        .zip(trig)
        .map(|((qp, kp), &(s, c))| {
            let dot = qp[0] * kp[0] + qp[1] * kp[1];
            let cross = qp[0] * kp[1] - qp[1] * kp[0];
            match kind {
                ScoreKind::Real => dot * c + cross * s,
                ScoreKind::Imag => dot * s - cross * c,
            }
        })
        .sum()
}

fn run(identity: Identity, cfg: &McConfig) -> Result<ExpectationCheck> {
    validate(cfg)?;
    let params = RotaryParams::new(cfg.d, 10_000.0)?;
    let trig: Vec<(f64, f64)> = params
        .thetas()
        .iter()
        .map(|&th| angle_sin_cos(th, cfg.delta_t))
        .collect();
    let feature = Normal::new(cfg.mu, cfg.sigma).expect("sigma > 0");
    let perturb = Normal::new(0.0, PERTURBATION_SCALE * cfg.sigma).expect("sigma > 0");
    let d = cfg.d;
    let shards = cfg.n_samples.div_ceil(SHARD);

    let moments: Vec<Moments> = (0..shards)
        .into_par_iter()
        .map(|shard| {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(shard as u64);
            let count = SHARD.min(cfg.n_samples - shard * SHARD);
            let mut q = vec![0.0; d];
            let mut k = vec![0.0; d];
            let mut m = Moments::default();
            for _ in 0..count {
                q.iter_mut().for_each(|x| *x = feature.sample(&mut rng));
                let x = match identity {
                    Identity::Aggregation => {
                        // k doubles as q + ε for the first score
                        k.iter_mut()
                            .zip(&q)
                            .for_each(|(x, qi)| *x = qi + perturb.sample(&mut rng));
                        let near = score(cfg.variant, &q, &k, &trig);
                        k.iter_mut().for_each(|x| *x = feature.sample(&mut rng));
                        near - score(cfg.variant, &q, &k, &trig)
                    }
                    Identity::MeanScore => score(cfg.variant, &q, &q, &trig),
                };
                m.push(x);
            }
            m
        })
        .collect();
    let total = moments.into_iter().fold(Moments::default(), Moments::merge);
    let var = total.m2 / (total.n - 1.0);

    Ok(ExpectationCheck {
        identity,
        variant: cfg.variant,
        mu: cfg.mu,
        sigma: cfg.sigma,
        d: cfg.d,
        delta_t: cfg.delta_t,
        closed_form: closed_form(identity, cfg.variant, cfg.mu, cfg.sigma, cfg.d, cfg.delta_t)?,
        mc_estimate: total.mean,
        mc_stderr: (var / total.n).sqrt(),
        n_samples: cfg.n_samples,
    })
}

/// Similar-versus-independent key gap.
pub fn mc_aggregation_check(cfg: &McConfig) -> Result<ExpectationCheck> {
    run(Identity::Aggregation, cfg)
}

/// Expected score of a query against itself at offset `Δt`.
pub fn mc_mean_score_check(cfg: &McConfig) -> Result<ExpectationCheck> {
    run(Identity::MeanScore, cfg)
}
