//! Single-block grouped-query attention with RoPE / RoPE++ head layouts.
//!
//! Queries are projected once. For the EH and EC layouts each physical query
//! head is expanded into a real head and an imaginary head (the same query
//! turned by `-π/2`), interleaved as output heads `2p` and `2p + 1`. Both
//! then receive the same position rotation and read the same K/V head, so
//! the imaginary head's logits are exactly the imaginary scores.
//!
//! Logits are scaled by `1/√d` for both kinds of head unless another scale
//! is given; the imaginary heads use the same scale as their real twins.

mod layout;
mod matrix;
mod noise;
pub mod weights;

pub use layout::{build_layout, HeadLayout, ProjectionSet};
pub use matrix::Matrix;
pub use noise::{inject_noise, NoiseSpec};

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{invalid, shape, Result};
use crate::rotary::{self, RotaryParams, ScoreKind};
use crate::Variant;

/// Expands projected queries `[seq × physical·d]` into `[seq × output·d]`.
///
/// RoPE passes through. EH/EC emit, per physical head, the original query
/// (real head) followed by its `-π/2` turn (imaginary head).
pub fn expand_queries(q: &Matrix, layout: &HeadLayout) -> Result<Matrix> {
    if q.cols() != layout.q_width() {
        return Err(shape(format!(
            "queries have width {}, layout needs {}",
            q.cols(),
            layout.q_width()
        )));
    }
    if !layout.variant.has_imaginary() {
        return Ok(q.clone());
    }
    let d = layout.head_dim;
    let mut out = Matrix::zeros(q.rows(), layout.output_width());
    for t in 0..q.rows() {
        let src = q.row(t);
        let dst = out.row_mut(t);
        for p in 0..layout.physical_q_heads {
            let head = &src[p * d..(p + 1) * d];
            dst[2 * p * d..(2 * p + 1) * d].copy_from_slice(head);
            let imag = &mut dst[(2 * p + 1) * d..(2 * p + 2) * d];
            imag.copy_from_slice(head);
            rotary::quarter_neg_in_place(imag);
        }
    }
    Ok(out)
}

/// Options for [`attend`].
#[derive(Debug, Clone, Default)]
pub struct AttendOptions {
    pub causal: bool,
    /// Logit scale; `None` means `1/√d`.
    pub scale: Option<f64>,
    pub noise: Option<NoiseSpec>,
    /// `false` entries exclude a key from every row (padding).
    pub key_mask: Option<Vec<bool>>,
    /// Keep per-head logits and probabilities in the output.
    pub record: bool,
}

impl AttendOptions {
    pub fn causal() -> Self {
        Self { causal: true, ..Self::default() }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct HeadStats {
    pub kind: ScoreKind,
    /// Frobenius norm of the unmasked, noise-free logits.
    pub logit_norm: f64,
    /// Mean of `Σₛ p(s)·(pos_t − pos_s)` over rows that are not fully masked.
    pub mean_distance: f64,
}

#[derive(Debug, Clone)]
pub struct AttendOutput {
    /// Concatenated head contexts, `[seq × output·d]`.
    pub contexts: Matrix,
    /// Rows whose keys were all masked; their contexts are zero.
    pub all_masked: Vec<bool>,
    pub heads: Vec<HeadStats>,
    /// Per-head `[seq × seq]` logits (masked = `-∞`), when recorded.
    pub logits: Option<Vec<Matrix>>,
    /// Per-head `[seq × seq]` probabilities (masked = 0), when recorded.
    pub probs: Option<Vec<Matrix>>,
}

impl AttendOutput {
    pub fn any_all_masked(&self) -> bool {
        self.all_masked.iter().any(|&m| m)
    }
}

fn rotate_heads(m: &Matrix, heads: usize, d: usize, positions: &[f64], params: &RotaryParams) -> Matrix {
    let mut out = m.clone();
    for (t, &pos) in positions.iter().enumerate() {
        let row = out.row_mut(t);
        for h in 0..heads {
            rotary::rotate_unchecked(&mut row[h * d..(h + 1) * d], pos, params.thetas());
        }
    }
    out
}

struct HeadResult {
    context: Vec<f64>,
    stats: HeadStats,
    logits: Option<Matrix>,
    probs: Option<Matrix>,
}

/// Attention over projected `q`, `k`, `v`.
///
/// `q` is `[seq × physical·d]`, `k` and `v` are `[seq × kv·d]`, all
/// token-major and not yet position-rotated. `positions[t]` is the position
/// of token `t` (fractional positions are allowed).
///
/// With `causal`, key `s` is visible to query `t` iff `pos_s ≤ pos_t`.
pub fn attend(
    q: &Matrix,
    k: &Matrix,
    v: &Matrix,
    positions: &[f64],
    layout: &HeadLayout,
    params: &RotaryParams,
    opts: &AttendOptions,
) -> Result<AttendOutput> {
    let seq = q.rows();
    if seq == 0 {
        return Err(invalid("attention over an empty sequence"));
    }
    if k.rows() != seq || v.rows() != seq || positions.len() != seq {
        return Err(shape(format!(
            "sequence lengths disagree: q {}, k {}, v {}, positions {}",
            seq,
            k.rows(),
            v.rows(),
            positions.len()
        )));
    }
    if k.cols() != layout.kv_width() || v.cols() != layout.kv_width() {
        return Err(shape(format!(
            "k/v width {}/{} does not match layout kv width {}",
            k.cols(),
            v.cols(),
            layout.kv_width()
        )));
    }
    if params.head_dim() != layout.head_dim {
        return Err(invalid(format!(
            "rotary head_dim {} differs from layout head_dim {}",
            params.head_dim(),
            layout.head_dim
        )));
    }
    if let Some(&bad) = positions.iter().find(|p| !p.is_finite() || **p < 0.0) {
        return Err(invalid(format!("positions must be finite and >= 0, got {bad}")));
    }
    if let Some(mask) = &opts.key_mask {
        if mask.len() != seq {
            return Err(shape(format!("key mask has length {}, expected {seq}", mask.len())));
        }
    }
    if let Some(noise) = &opts.noise {
        noise.validate()?;
    }

    let d = layout.head_dim;
    let scale = opts.scale.unwrap_or(1.0 / (d as f64).sqrt());
    let q_exp = expand_queries(q, layout)?;
    let q_rot = rotate_heads(&q_exp, layout.output_heads, d, positions, params);
    let k_rot = rotate_heads(k, layout.kv_heads, d, positions, params);

    let visible = |t: usize, s: usize| -> bool {
        let keep = opts.key_mask.as_ref().map_or(true, |m| m[s]);
        keep && (!opts.causal || positions[s] <= positions[t])
    };

    let results: Vec<Result<HeadResult>> = (0..layout.output_heads)
        .into_par_iter()
        .map(|o| {
            let kind = layout.head_kind(o);
            let kv = layout.kv_of(o);
            let mut context = vec![0.0; seq * d];
            let mut logits_rec = opts.record.then(|| Matrix::zeros(seq, seq));
            let mut probs_rec = opts.record.then(|| Matrix::zeros(seq, seq));
            let mut norm_sq = 0.0;
            let mut dist_sum = 0.0;
            let mut dist_rows = 0usize;
            let mut row = vec![0.0; seq];
            for t in 0..seq {
                let qt = &q_rot.row(t)[o * d..(o + 1) * d];
                for (s, x) in row.iter_mut().enumerate() {
                    *x = if visible(t, s) {
                        let l = scale * rotary::dot(qt, &k_rot.row(s)[kv * d..(kv + 1) * d]);
                        norm_sq += l * l;
                        l
                    } else {
                        f64::NEG_INFINITY
                    };
                }
                if let Some(noise) = &opts.noise {
                    inject_noise(&mut row, noise, kind, o, t)?;
                }
                if let Some(rec) = logits_rec.as_mut() {
                    rec.row_mut(t).copy_from_slice(&row);
                }
                let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                if max == f64::NEG_INFINITY {
                    continue;
                }
                let mut denom = 0.0;
                for x in row.iter_mut() {
                    if *x != f64::NEG_INFINITY {
                        *x = (*x - max).exp();
                        denom += *x;
                    } else {
                        *x = 0.0;
                    }
                }
                let ctx = &mut context[t * d..(t + 1) * d];
                let mut dist = 0.0;
                for (s, x) in row.iter_mut().enumerate() {
                    if *x == 0.0 {
                        continue;
                    }
                    *x /= denom;
                    let vs = &v.row(s)[kv * d..(kv + 1) * d];
                    for (c, &vv) in ctx.iter_mut().zip(vs) {
                        *c += *x * vv;
                    }
                    dist += *x * (positions[t] - positions[s]);
                }
                dist_sum += dist;
                dist_rows += 1;
                if let Some(rec) = probs_rec.as_mut() {
                    rec.row_mut(t).copy_from_slice(&row);
                }
            }
            Ok(HeadResult {
                context,
                stats: HeadStats {
                    kind,
                    logit_norm: norm_sq.sqrt(),
                    mean_distance: if dist_rows > 0 { dist_sum / dist_rows as f64 } else { 0.0 },
                },
                logits: logits_rec,
                probs: probs_rec,
            })
        })
        .collect();

    let mut contexts = Matrix::zeros(seq, layout.output_width());
    let mut heads = Vec::with_capacity(layout.output_heads);
    let mut logits = opts.record.then(Vec::new);
    let mut probs = opts.record.then(Vec::new);
    for (o, r) in results.into_iter().enumerate() {
        let r = r?;
        for t in 0..seq {
            contexts.row_mut(t)[o * d..(o + 1) * d].copy_from_slice(&r.context[t * d..(t + 1) * d]);
        }
        heads.push(r.stats);
        if let (Some(all), Some(m)) = (logits.as_mut(), r.logits) {
            all.push(m);
        }
        if let (Some(all), Some(m)) = (probs.as_mut(), r.probs) {
            all.push(m);
        }
    }
    let all_masked = (0..seq).map(|t| !(0..seq).any(|s| visible(t, s))).collect();
    Ok(AttendOutput { contexts, all_masked, heads, logits, probs })
}

/// `contexts · w_o` without bias.
pub fn project_output(contexts: &Matrix, w_o: &Matrix) -> Result<Matrix> {
    if contexts.cols() != w_o.rows() {
        return Err(shape(format!(
            "head width {} does not match w_o input width {}",
            contexts.cols(),
            w_o.rows()
        )));
    }
    contexts.matmul(w_o)
}

/// One attention block: projections, rotary attention and output projection.
#[derive(Debug, Clone)]
pub struct AttentionLayer {
    pub layout: HeadLayout,
    pub hidden: usize,
    pub weights: ProjectionSet,
    pub rotary: RotaryParams,
}

#[derive(Debug, Clone)]
pub struct LayerOutput {
    /// `[seq × hidden]`.
    pub output: Matrix,
    pub attend: AttendOutput,
    /// Projected keys, `[seq × kv·d]`, before rotation.
    pub keys: Matrix,
    /// Projected values, `[seq × kv·d]`.
    pub values: Matrix,
}

impl AttentionLayer {
    pub fn new(layout: HeadLayout, hidden: usize, weights: ProjectionSet, rotary: RotaryParams) -> Result<Self> {
        weights.check(&layout, hidden)?;
        if rotary.head_dim() != layout.head_dim {
            return Err(invalid("rotary head_dim differs from layout head_dim"));
        }
        Ok(Self { layout, hidden, weights, rotary })
    }

    /// Builds a layer with weights from [`weights::generate`].
    pub fn random(
        variant: Variant,
        hidden: usize,
        base_heads: usize,
        base_kv_heads: usize,
        rotary: RotaryParams,
        seed: u64,
    ) -> Result<Self> {
        let layout = HeadLayout::new(variant, base_heads, base_kv_heads, rotary.head_dim())?;
        let w = weights::generate(&layout, hidden, seed)?;
        Self::new(layout, hidden, w, rotary)
    }

    pub fn forward(&self, x: &Matrix, positions: &[f64], opts: &AttendOptions) -> Result<LayerOutput> {
        if x.cols() != self.hidden {
            return Err(shape(format!("input width {} != hidden {}", x.cols(), self.hidden)));
        }
        let q = x.matmul(&self.weights.w_q)?;
        let keys = x.matmul(&self.weights.w_k)?;
        let values = x.matmul(&self.weights.w_v)?;
        let attend = attend(&q, &keys, &values, positions, &self.layout, &self.rotary, opts)?;
        let output = project_output(&attend.contexts, &self.weights.w_o)?;
        Ok(LayerOutput { output, attend, keys, values })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rotary::{build_thetas, score_imag_relative, score_real_relative, PairVector};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
        Matrix::from_fn(rows, cols, |_, _| rng.gen_range(-1.0..1.0))
    }

    fn positions(n: usize) -> Vec<f64> {
        (0..n).map(|i| i as f64).collect()
    }

    #[test]
    fn expand_rope_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let layout = build_layout(Variant::Rope, 2, 1, 4).unwrap();
        let q = random_matrix(&mut rng, 3, 8);
        assert_eq!(expand_queries(&q, &layout).unwrap(), q);
    }

    #[test]
    fn expand_ec_single_head() {
        let layout = build_layout(Variant::Ec, 1, 1, 2).unwrap();
        let q = Matrix::from_vec(1, 2, vec![1.0, 0.0]).unwrap();
        let e = expand_queries(&q, &layout).unwrap();
        assert_eq!(e.as_slice(), &[1.0, 0.0, 0.0, -1.0]);
        assert!(expand_queries(&Matrix::zeros(1, 4), &layout).is_err());
    }

    #[test]
    fn imaginary_head_logits_are_imaginary_scores() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let d = 8;
        let layout = build_layout(Variant::Ec, 2, 1, d).unwrap();
        let params = build_thetas(d, 10000.0).unwrap();
        let seq = 6;
        let q = random_matrix(&mut rng, seq, 2 * d);
        let k = random_matrix(&mut rng, seq, d);
        let v = random_matrix(&mut rng, seq, d);
        let pos = positions(seq);
        let opts = AttendOptions { record: true, scale: Some(1.0), ..Default::default() };
        let out = attend(&q, &k, &v, &pos, &layout, &params, &opts).unwrap();
        let logits = out.logits.unwrap();
        for p in 0..2 {
            for t in 0..seq {
                for s in 0..seq {
                    let qv = PairVector::new(q.row(t)[p * d..(p + 1) * d].to_vec()).unwrap();
                    let kv = PairVector::new(k.row(s).to_vec()).unwrap();
                    let dt = pos[t] - pos[s];
                    let re = score_real_relative(&qv, &kv, dt, &params).unwrap();
                    let im = score_imag_relative(&qv, &kv, dt, &params).unwrap();
                    assert!((logits[2 * p].get(t, s) - re).abs() < 1e-12);
                    assert!((logits[2 * p + 1].get(t, s) - im).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn single_token_returns_value_row() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let params = build_thetas(4, 10000.0).unwrap();
        for variant in Variant::ALL {
            let layout = build_layout(variant, 4, 2, 4).unwrap();
            let q = random_matrix(&mut rng, 1, layout.q_width());
            let k = random_matrix(&mut rng, 1, layout.kv_width());
            let v = random_matrix(&mut rng, 1, layout.kv_width());
            let out = attend(&q, &k, &v, &[0.0], &layout, &params, &AttendOptions::causal()).unwrap();
            for o in 0..layout.output_heads {
                let kv = layout.kv_of(o);
                assert_eq!(&out.contexts.row(0)[o * 4..(o + 1) * 4], &v.row(0)[kv * 4..(kv + 1) * 4]);
            }
        }
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let params = build_thetas(8, 10000.0).unwrap();
        let layout = build_layout(Variant::Eh, 4, 2, 8).unwrap();
        let seq = 9;
        let q = random_matrix(&mut rng, seq, layout.q_width());
        let k = random_matrix(&mut rng, seq, layout.kv_width());
        let v = random_matrix(&mut rng, seq, layout.kv_width());
        let opts = AttendOptions {
            causal: true,
            record: true,
            noise: Some(NoiseSpec::new(0.5, 2.0, 3).unwrap()),
            ..Default::default()
        };
        let out = attend(&q, &k, &v, &positions(seq), &layout, &params, &opts).unwrap();
        for p in out.probs.unwrap() {
            for t in 0..seq {
                let sum: f64 = p.row(t).iter().sum();
                assert!((sum - 1.0).abs() < 1e-12);
                assert!(p.row(t)[t + 1..].iter().all(|&x| x == 0.0));
            }
        }
    }

    #[test]
    fn fully_masked_row_is_zero_and_flagged() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let params = build_thetas(4, 10000.0).unwrap();
        let layout = build_layout(Variant::Rope, 1, 1, 4).unwrap();
        let q = random_matrix(&mut rng, 3, 4);
        let k = random_matrix(&mut rng, 3, 4);
        let v = random_matrix(&mut rng, 3, 4);
        let opts = AttendOptions {
            causal: true,
            key_mask: Some(vec![false, true, true]),
            ..Default::default()
        };
        let out = attend(&q, &k, &v, &positions(3), &layout, &params, &opts).unwrap();
        assert_eq!(out.all_masked, vec![true, false, false]);
        assert!(out.contexts.row(0).iter().all(|&x| x == 0.0));
        assert_eq!(out.contexts.row(1), v.row(1));
    }

    #[test]
    fn shape_and_argument_errors() {
        let params = build_thetas(4, 10000.0).unwrap();
        let layout = build_layout(Variant::Rope, 1, 1, 4).unwrap();
        let z = Matrix::zeros(0, 4);
        assert!(attend(&z, &z, &z, &[], &layout, &params, &AttendOptions::default()).is_err());
        let m = Matrix::zeros(2, 4);
        assert!(attend(&m, &m, &m, &[0.0], &layout, &params, &AttendOptions::default()).is_err());
        assert!(attend(&m, &m, &m, &[0.0, -1.0], &layout, &params, &AttendOptions::default()).is_err());
        let bad = Matrix::zeros(2, 6);
        assert!(attend(&m, &bad, &m, &[0.0, 1.0], &layout, &params, &AttendOptions::default()).is_err());
    }

    #[test]
    fn project_output_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        // selector picking head 1 out of two 4-wide heads into an 8-wide hidden
        let heads = random_matrix(&mut rng, 3, 8);
        let sel = Matrix::from_fn(8, 8, |r, c| if r >= 4 && c == r - 4 { 1.0 } else { 0.0 });
        let out = project_output(&heads, &sel).unwrap();
        for t in 0..3 {
            assert_eq!(&out.row(t)[..4], &heads.row(t)[4..]);
            assert!(out.row(t)[4..].iter().all(|&x| x == 0.0));
        }
        let w = random_matrix(&mut rng, 8, 8);
        assert!(project_output(&Matrix::zeros(3, 8), &w).unwrap().as_slice().iter().all(|&x| x == 0.0));
        // naive triple loop
        let o = project_output(&heads, &w).unwrap();
        for i in 0..3 {
            for j in 0..8 {
                let mut acc = 0.0;
                for k in 0..8 {
                    acc += heads.get(i, k) * w.get(k, j);
                }
                assert!((o.get(i, j) - acc).abs() < 1e-12);
            }
        }
        assert!(project_output(&heads, &Matrix::zeros(4, 8)).is_err());
    }

    #[test]
    fn parallel_schedule_does_not_change_bits() {
        let params = build_thetas(8, 10000.0).unwrap();
        let layer = AttentionLayer::random(Variant::Ec, 32, 4, 2, params, 17).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let x = random_matrix(&mut rng, 12, 32);
        let pos = positions(12);
        let a = layer.forward(&x, &pos, &AttendOptions::causal()).unwrap();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let b = pool.install(|| layer.forward(&x, &pos, &AttendOptions::causal()).unwrap());
        assert_eq!(a.output, b.output);
    }
}
