//! Single-thread decode micro-benchmark for the attention kernel.
//!
//! For every context length the benchmark allocates a per-layer K/V cache,
//! then times one decode step: project nothing, expand and rotate the new
//! query, score it against every cached key, softmax, and sum values. The
//! reported `tpot_us` is the median over `repeats` of the whole step across
//! all layers.

use std::hint::black_box;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{kv_cache_bytes, score_flops, ModelConfig};
use crate::attention::HeadLayout;
use crate::error::{invalid, Result};
use crate::rotary::{angle_sin_cos, RotaryParams};
use crate::Variant;

pub const BENCH_SCHEMA: &str = "ropepp.bench.v1";

/// Element type of the benchmark cache.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FloatMode {
    F32,
    F64,
}

impl FloatMode {
    pub fn bytes(self) -> usize {
        match self {
            FloatMode::F32 => 4,
            FloatMode::F64 => 8,
        }
    }
}

impl std::str::FromStr for FloatMode {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "f32" => Ok(FloatMode::F32),
            "f64" => Ok(FloatMode::F64),
            other => Err(invalid(format!("unknown float mode '{other}' (expected f32 or f64)"))),
        }
    }
}

pub trait BenchFloat: Copy + Default + PartialOrd + Send + Sync + 'static {
    fn from_f64(x: f64) -> Self;
    fn to_f64(self) -> f64;
    fn add(self, o: Self) -> Self;
    fn mul(self, o: Self) -> Self;
    fn sub(self, o: Self) -> Self;
    fn div(self, o: Self) -> Self;
    fn exp(self) -> Self;
}

macro_rules! impl_bench_float {
    ($t:ty) => {
        impl BenchFloat for $t {
            fn from_f64(x: f64) -> Self {
                x as $t
            }
            fn to_f64(self) -> f64 {
                self as f64
            }
            fn add(self, o: Self) -> Self {
                self + o
            }
            fn mul(self, o: Self) -> Self {
                self * o
            }
            fn sub(self, o: Self) -> Self {
                self - o
            }
            fn div(self, o: Self) -> Self {
                self / o
            }
            fn exp(self) -> Self {
                <$t>::exp(self)
            }
        }
    };
}

impl_bench_float!(f32);
impl_bench_float!(f64);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub seq: usize,
    pub tpot_us: Option<f64>,
    /// Bytes actually held by the K/V cache arrays.
    pub kv_bytes: usize,
    /// Logit and weighted-sum work only, matching what is timed.
    pub flops: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchMeta {
    pub threads: usize,
    pub float: FloatMode,
    pub dtype_bytes: usize,
    pub repeats: usize,
    pub seed: u64,
    pub scope: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub schema: String,
    pub config: ModelConfig,
    pub variant: Variant,
    pub meta: BenchMeta,
    pub rows: Vec<BenchRow>,
}

struct LayerCache<T> {
    k: Vec<T>,
    v: Vec<T>,
}

impl<T> LayerCache<T> {
    fn bytes(&self) -> usize {
        (self.k.len() + self.v.len()) * std::mem::size_of::<T>()
    }
}

fn random_vec<T: BenchFloat>(rng: &mut ChaCha8Rng, n: usize) -> Vec<T> {
    (0..n).map(|_| T::from_f64(rng.gen_range(-1.0..1.0))).collect()
}

/// One decode step for one layer. Returns a checksum so the work is kept.
fn decode_layer<T: BenchFloat>(
    layout: &HeadLayout,
    query: &[T],
    cache: &LayerCache<T>,
    seq: usize,
    sin_cos: &[(T, T)],
    scratch_q: &mut [T],
    logits: &mut [T],
    out: &mut [T],
) -> f64 {
    let d = layout.head_dim;
    let kv_w = layout.kv_width();
    let scale = T::from_f64(1.0 / (d as f64).sqrt());
    // expand and rotate the new query
    for o in 0..layout.output_heads {
        let p = layout.physical_of(o);
        let src = &query[p * d..(p + 1) * d];
        let dst = &mut scratch_q[o * d..(o + 1) * d];
        let imag = layout.variant.has_imaginary() && o % 2 == 1;
        for (n, &(s, c)) in sin_cos.iter().enumerate() {
            let (mut x, mut y) = (src[2 * n], src[2 * n + 1]);
            if imag {
                (x, y) = (y, T::from_f64(0.0).sub(x));
            }
            dst[2 * n] = x.mul(c).sub(y.mul(s));
            dst[2 * n + 1] = x.mul(s).add(y.mul(c));
        }
    }
    let mut check = 0.0;
    for o in 0..layout.output_heads {
        let kv = layout.kv_of(o);
        let q = &scratch_q[o * d..(o + 1) * d];
        let mut max = T::from_f64(f64::NEG_INFINITY);
        for (s, l) in logits[..seq].iter_mut().enumerate() {
            let k = &cache.k[s * kv_w + kv * d..s * kv_w + (kv + 1) * d];
            let mut acc = T::default();
            for (a, b) in q.iter().zip(k) {
                acc = acc.add(a.mul(*b));
            }
            *l = acc.mul(scale);
            if *l > max {
                max = *l;
            }
        }
        let mut denom = T::default();
        for l in logits[..seq].iter_mut() {
            *l = l.sub(max).exp();
            denom = denom.add(*l);
        }
        let ctx = &mut out[o * d..(o + 1) * d];
        ctx.iter_mut().for_each(|x| *x = T::default());
        for (s, l) in logits[..seq].iter().enumerate() {
            let p = l.div(denom);
            let v = &cache.v[s * kv_w + kv * d..s * kv_w + (kv + 1) * d];
            for (c, &vv) in ctx.iter_mut().zip(v) {
                *c = c.add(p.mul(vv));
            }
        }
        check += ctx[0].to_f64();
    }
    check
}

fn run<T: BenchFloat>(
    config: &ModelConfig,
    variant: Variant,
    seq_lengths: &[usize],
    repeats: usize,
    seed: u64,
) -> Result<Vec<BenchRow>> {
    let layout = config.layout(variant)?;
    let d = layout.head_dim;
    let params = RotaryParams::new(d, 10_000.0)?;
    let per_token = kv_cache_bytes(config, variant, std::mem::size_of::<T>())?;
    let mut rows = Vec::with_capacity(seq_lengths.len());
    for &seq in seq_lengths {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(seq as u64);
        let caches: Vec<LayerCache<T>> = (0..config.layers)
            .map(|_| LayerCache {
                k: random_vec(&mut rng, seq * layout.kv_width()),
                v: random_vec(&mut rng, seq * layout.kv_width()),
            })
            .collect();
        let queries: Vec<Vec<T>> = (0..config.layers)
            .map(|_| random_vec(&mut rng, layout.q_width()))
            .collect();
        // per-position table for the decoded token
        let sin_cos: Vec<(T, T)> = params
            .thetas()
            .iter()
            .map(|&th| {
                let (s, c) = angle_sin_cos(th, (seq - 1) as f64);
                (T::from_f64(s), T::from_f64(c))
            })
            .collect();
        let mut scratch_q = vec![T::default(); layout.output_width()];
        let mut logits = vec![T::default(); seq];
        let mut out = vec![T::default(); layout.output_width()];

        let mut times = Vec::with_capacity(repeats);
        for _ in 0..repeats {
            let start = Instant::now();
            let mut check = 0.0;
            for (cache, q) in caches.iter().zip(&queries) {
                check += decode_layer(&layout, q, cache, seq, &sin_cos, &mut scratch_q, &mut logits, &mut out);
            }
            black_box(check);
            times.push(start.elapsed().as_secs_f64() * 1e6);
        }
        times.sort_by(|a, b| a.total_cmp(b));
        let measured: usize = caches.iter().map(LayerCache::bytes).sum();
        debug_assert_eq!(measured, per_token * seq);
        rows.push(BenchRow {
            seq,
            tpot_us: Some(times[times.len() / 2]),
            kv_bytes: measured,
            flops: 2 * score_flops(config, variant, seq)?.attention_core(),
        });
    }
    Ok(rows)
}

/// Times one decode step per context length on the current thread.
pub fn bench_attend(
    config: &ModelConfig,
    variant: Variant,
    seq_lengths: &[usize],
    repeats: usize,
    seed: u64,
    float: FloatMode,
) -> Result<BenchReport> {
    if seq_lengths.is_empty() {
        return Err(invalid("no sequence lengths given"));
    }
    if seq_lengths.contains(&0) {
        return Err(invalid("sequence lengths must be >= 1"));
    }
    if seq_lengths.windows(2).any(|w| w[1] < w[0]) {
        return Err(invalid("sequence lengths must be sorted ascending"));
    }
    if repeats == 0 {
        return Err(invalid("repeats must be >= 1"));
    }
    let rows = match float {
        FloatMode::F32 => run::<f32>(config, variant, seq_lengths, repeats, seed)?,
        FloatMode::F64 => run::<f64>(config, variant, seq_lengths, repeats, seed)?,
    };
    Ok(BenchReport {
        schema: BENCH_SCHEMA.to_string(),
        config: config.clone(),
        variant,
        meta: BenchMeta {
            threads: 1,
            float,
            dtype_bytes: float.bytes(),
            repeats,
            seed,
            scope: "attention kernel only (no projections, MLP, embeddings or activations)".into(),
        },
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> ModelConfig {
        ModelConfig {
            name: "tiny".into(),
            hidden: 64,
            intermediate: 128,
            layers: 2,
            attn_heads: 4,
            kv_heads: 2,
            vocab: 100,
        }
    }

    #[test]
    fn single_row_bookkeeping() {
        let r = bench_attend(&tiny(), Variant::Rope, &[1], 1, 0, FloatMode::F32).unwrap();
        assert_eq!(r.rows.len(), 1);
        assert_eq!(r.rows[0].kv_bytes, kv_cache_bytes(&tiny(), Variant::Rope, 4).unwrap());
        assert!(r.rows[0].tpot_us.unwrap() >= 0.0);
        assert_eq!(r.meta.threads, 1);
    }

    #[test]
    fn argument_checks() {
        let c = tiny();
        assert!(bench_attend(&c, Variant::Rope, &[], 1, 0, FloatMode::F32).is_err());
        assert!(bench_attend(&c, Variant::Rope, &[4, 2], 1, 0, FloatMode::F32).is_err());
        assert!(bench_attend(&c, Variant::Rope, &[0], 1, 0, FloatMode::F32).is_err());
        assert!(bench_attend(&c, Variant::Rope, &[2], 0, 0, FloatMode::F32).is_err());
    }

    #[test]
    fn f32_kernel_agrees_with_f64_kernel() {
        let c = tiny();
        let layout = c.layout(Variant::Ec).unwrap();
        let params = RotaryParams::new(layout.head_dim, 10_000.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let seq = 17;
        let k64: Vec<f64> = random_vec(&mut rng, seq * layout.kv_width());
        let v64: Vec<f64> = random_vec(&mut rng, seq * layout.kv_width());
        let q64: Vec<f64> = random_vec(&mut rng, layout.q_width());
        let tab64: Vec<(f64, f64)> = params.thetas().iter().map(|&t| angle_sin_cos(t, 16.0)).collect();
        let mut s = vec![0.0; layout.output_width()];
        let mut l = vec![0.0; seq];
        let mut o64 = vec![0.0; layout.output_width()];
        let cache = LayerCache { k: k64.clone(), v: v64.clone() };
        decode_layer(&layout, &q64, &cache, seq, &tab64, &mut s, &mut l, &mut o64);

        let f = |v: &[f64]| v.iter().map(|&x| x as f32).collect::<Vec<f32>>();
        let cache32 = LayerCache { k: f(&k64), v: f(&v64) };
        let tab32: Vec<(f32, f32)> = tab64.iter().map(|&(a, b)| (a as f32, b as f32)).collect();
        let mut s32 = vec![0.0f32; layout.output_width()];
        let mut l32 = vec![0.0f32; seq];
        let mut o32 = vec![0.0f32; layout.output_width()];
        decode_layer(&layout, &f(&q64), &cache32, seq, &tab32, &mut s32, &mut l32, &mut o32);
        for (a, b) in o64.iter().zip(&o32) {
            assert!((a - *b as f64).abs() < 1e-5);
        }
    }
}
