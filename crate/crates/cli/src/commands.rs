use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;
use std::str::FromStr;

use anyhow::{anyhow, bail, Context, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

use ropepp::accounting::{
    bench_attend, kv_cache_bytes, projection_params, score_flops, Budget, FloatMode, ModelConfig,
    DEFAULT_DTYPE_BYTES,
};
use ropepp::analysis::{coverage_map, sample_curves, write_curves_csv, CoverageVariant, CurveKind};
use ropepp::attention::{weights, AttendOptions, AttentionLayer, Matrix, NoiseSpec};
use ropepp::rotary::{
    apply_absolute, rotate_quarter_pos, score_absolute, score_complex_oracle,
    score_imag_relative, score_real_relative,
};
use ropepp::{PairVector, RotaryParams, ScoreKind, Variant};

use crate::config::RunConfig;
use crate::{AttendArgs, BenchArgs, BudgetArgs, CoverageArgs, CurvesArgs, GlobalArgs, VerifyArgs, WeightsArgs};

const VERIFY_SCHEMA: &str = "ropepp.verify.v1";
const ATTEND_SCHEMA: &str = "ropepp.attend.v1";
const BUDGET_SCHEMA: &str = "ropepp.budget.v1";
const DEFAULT_BASE: f64 = 10_000.0;

fn tiny_model() -> ModelConfig {
    ModelConfig {
        name: "tiny".into(),
        hidden: 64,
        intermediate: 128,
        layers: 2,
        attn_heads: 4,
        kv_heads: 2,
        vocab: 256,
    }
}

fn output(g: &GlobalArgs, cfg: &RunConfig) -> Result<Box<dyn Write>> {
    let path: Option<PathBuf> = cfg.pick(g.out.clone(), "out")?;
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(
            File::create(&p).with_context(|| format!("creating {}", p.display()))?,
        )),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn write_json(g: &GlobalArgs, cfg: &RunConfig, value: &Value) -> Result<()> {
    let mut w = output(g, cfg)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

fn parse_variant(s: &str) -> Result<Variant> {
    Variant::from_str(s).map_err(|e| anyhow!("{e}"))
}

fn random_pv(rng: &mut ChaCha8Rng, d: usize) -> PairVector {
    PairVector::new((0..d).map(|_| rng.gen_range(-1.0..1.0)).collect()).expect("even length")
}

struct CheckResult {
    name: &'static str,
    d: usize,
    cases: usize,
    max_dev: f64,
    tol: f64,
}

impl CheckResult {
    fn pass(&self) -> bool {
        self.max_dev <= self.tol
    }

    fn to_json(&self) -> Value {
        json!({
            "check": self.name,
            "d": self.d,
            "cases": self.cases,
            "max_dev": self.max_dev,
            "tolerance": self.tol,
            "pass": self.pass(),
        })
    }
}

fn rel_dev(got: f64, want: f64) -> f64 {
    (got - want).abs() / (1.0 + want.abs())
}

fn verify_size(d: usize, cases: usize, rng: &mut ChaCha8Rng) -> Result<Vec<CheckResult>> {
    let p = RotaryParams::new(d, DEFAULT_BASE)?;
    let (mut three, mut quarter, mut shift, mut norm) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    for _ in 0..cases {
        let q = random_pv(rng, d);
        let k = random_pv(rng, d);
        let t = rng.gen_range(0..100_000) as f64;
        let s = rng.gen_range(0..100_000) as f64;
        let c = rng.gen_range(0..=1_000_000) as f64;
        let oracle = score_complex_oracle(&q, &k, t, s, &p)?;
        let re = score_real_relative(&q, &k, t - s, &p)?;
        let im = score_imag_relative(&q, &k, t - s, &p)?;
        for kind in [ScoreKind::Real, ScoreKind::Imag] {
            let rel = if kind == ScoreKind::Real { re } else { im };
            let abs = score_absolute(&q, &k, t, s, &p, kind)?;
            three = three.max(rel_dev(rel, oracle.get(kind))).max(rel_dev(abs, oracle.get(kind)));
            let moved = score_absolute(&q, &k, t + c, s + c, &p, kind)?;
            shift = shift.max(rel_dev(moved, abs));
        }
        let turned = score_imag_relative(&rotate_quarter_pos(&q), &k, t - s, &p)?;
        quarter = quarter.max(rel_dev(turned, re));
        let r = apply_absolute(&q, t, &p)?;
        for (a, b) in q.pair_norms().iter().zip(r.pair_norms()) {
            norm = norm.max(rel_dev(b, *a));
        }
    }

    // EC with the imaginary output rows zeroed must reproduce RoPE
    let hidden = 2 * d.max(4);
    let layer_seed: u64 = rng.gen();
    let rope = AttentionLayer::random(Variant::Rope, hidden, 2, 2, p.clone(), layer_seed)?;
    let mut ec = AttentionLayer::random(Variant::Ec, hidden, 2, 2, p, layer_seed)?;
    ec.weights.zero_imaginary_output(&ec.layout);
    let seq = 16;
    let x = Matrix::from_fn(seq, hidden, |_, _| rng.gen_range(-1.0..1.0));
    let pos: Vec<f64> = (0..seq).map(|i| i as f64).collect();
    let a = rope.forward(&x, &pos, &AttendOptions::causal())?.output;
    let b = ec.forward(&x, &pos, &AttendOptions::causal())?.output;
    let collapse = a.max_abs_diff(&b).unwrap_or(f64::INFINITY);

    Ok(vec![
        CheckResult { name: "three_form_equivalence", d, cases, max_dev: three, tol: 1e-10 },
        CheckResult { name: "quarter_turn", d, cases, max_dev: quarter, tol: 1e-10 },
        CheckResult { name: "shift_invariance", d, cases, max_dev: shift, tol: 1e-10 },
        CheckResult { name: "pair_norms", d, cases, max_dev: norm, tol: 1e-12 },
        CheckResult { name: "ec_collapse", d, cases: 1, max_dev: collapse, tol: 1e-10 },
    ])
}

pub fn verify(g: &GlobalArgs, cfg: &RunConfig, a: &VerifyArgs) -> Result<bool> {
    let seed = cfg.pick(g.seed, "seed")?.unwrap_or(0);
    let sizes = cfg.pick_list(a.sizes.clone(), "verify.sizes")?.unwrap_or_else(|| vec![2, 8, 64, 128]);
    let cases = cfg.pick(a.cases, "verify.cases")?.unwrap_or(1000);
    if sizes.is_empty() {
        bail!("--sizes needs at least one head dimension");
    }
    if cases == 0 {
        bail!("--cases must be >= 1");
    }
    let mut checks = Vec::new();
    for (i, &d) in sizes.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(i as u64);
        checks.extend(verify_size(d, cases, &mut rng)?);
    }
    let pass = checks.iter().all(CheckResult::pass);
    let max_dev = checks
        .iter()
        .filter(|c| c.tol == 1e-10)
        .map(|c| c.max_dev)
        .fold(0.0, f64::max);
    let report = json!({
        "schema": VERIFY_SCHEMA,
        "seed": seed,
        "sizes": sizes,
        "cases": cases,
        "pass": pass,
        "max_dev": max_dev,
        "checks": checks.iter().map(CheckResult::to_json).collect::<Vec<_>>(),
    });
    write_json(g, cfg, &report)?;
    if !pass {
        eprintln!("verify: one or more checks exceeded tolerance");
    }
    Ok(pass)
}

pub fn curves(g: &GlobalArgs, cfg: &RunConfig, a: &CurvesArgs) -> Result<()> {
    let d = cfg.pick(a.d, "rotary.d")?.unwrap_or(128);
    let max_dt = cfg.pick(a.max_dt, "curves.max_dt")?.unwrap_or(1e4);
    let grid = cfg.pick(a.grid, "curves.grid")?.unwrap_or(200);
    let kinds: Vec<String> = cfg
        .pick_list(a.kinds.clone(), "curves.kinds")?
        .unwrap_or_else(|| CurveKind::ALL.iter().map(|k| k.name().to_string()).collect());
    let kinds = kinds
        .iter()
        .map(|k| CurveKind::from_str(k).map_err(|e| anyhow!("{e}")))
        .collect::<Result<Vec<_>>>()?;
    if kinds.is_empty() {
        bail!("--kinds needs at least one curve kind");
    }
    let samples = sample_curves(d, max_dt, grid, &kinds)?;
    let mut w = output(g, cfg)?;
    write_curves_csv(&mut w, &samples)?;
    w.flush()?;
    Ok(())
}

pub fn coverage(g: &GlobalArgs, cfg: &RunConfig, a: &CoverageArgs) -> Result<()> {
    let d = cfg.pick(a.d, "rotary.d")?.unwrap_or(128);
    let base = cfg.pick(a.base, "rotary.base")?.unwrap_or(DEFAULT_BASE);
    let train_len = cfg.pick(a.train_len, "coverage.train_len")?.unwrap_or(4096);
    let variant: String = cfg.pick(a.variant.clone(), "coverage.variant")?.unwrap_or_else(|| "ropepp".into());
    let variant = CoverageVariant::from_str(&variant).map_err(|e| anyhow!("{e}"))?;
    let params = RotaryParams::new(d, base)?;
    let report = coverage_map(&params, train_len, variant)?;
    let mut w = output(g, cfg)?;
    report.write_csv(&mut w)?;
    w.flush()?;
    Ok(())
}

fn matrix_rows(m: &Matrix) -> Vec<Vec<f64>> {
    (0..m.rows()).map(|r| m.row(r).to_vec()).collect()
}

pub fn attend(g: &GlobalArgs, cfg: &RunConfig, a: &AttendArgs) -> Result<()> {
    let seed: Option<u64> = cfg.pick(g.seed, "seed")?;
    if a.weights.is_none() && seed.is_none() {
        bail!("attend needs --weights PATH or --seed N to obtain weights");
    }
    let seq = cfg.pick(a.seq, "attend.seq")?.unwrap_or(32);
    if seq == 0 {
        bail!("--seq must be >= 1");
    }
    let base = cfg.pick(a.base, "rotary.base")?.unwrap_or(DEFAULT_BASE);
    let scaling = cfg.scaling()?;
    let requested: Option<String> = cfg.pick(a.variant.clone(), "attend.variant")?;
    let requested = requested.as_deref().map(parse_variant).transpose()?;

    let mut layer = match &a.weights {
        Some(path) => {
            let (layout, hidden, set) = weights::load(path)
                .with_context(|| format!("loading weights {}", path.display()))?;
            if let Some(v) = requested {
                if v != layout.variant {
                    bail!("--variant {v} does not match weights file variant {}", layout.variant);
                }
            }
            let rotary = RotaryParams::new(layout.head_dim, base)?;
            AttentionLayer::new(layout, hidden, set, rotary)?
        }
        None => {
            let model = cfg.model()?.unwrap_or_else(tiny_model);
            let variant = requested.unwrap_or(Variant::Rope);
            let rotary = RotaryParams::new(model.head_dim(), base)?;
            AttentionLayer::random(
                variant,
                model.hidden,
                model.attn_heads,
                model.kv_heads,
                rotary,
                seed.expect("checked above"),
            )?
        }
    };
    if a.zero_imag_wo {
        let layout = layer.layout.clone();
        layer.weights.zero_imaginary_output(&layout);
    }
    layer.rotary = scaling.apply_params(&layer.rotary)?;

    let sigma_real = cfg.pick(a.noise_real, "noise.real")?.unwrap_or(0.0);
    let sigma_imag = cfg.pick(a.noise_imag, "noise.imag")?.unwrap_or(0.0);
    let input_seed = seed.unwrap_or(0);
    let noise = NoiseSpec::new(sigma_real, sigma_imag, input_seed)?;

    let mut rng = ChaCha8Rng::seed_from_u64(input_seed);
    rng.set_stream(u64::MAX);
    let x = Matrix::from_fn(seq, layer.hidden, |_, _| rng.gen_range(-1.0..1.0));
    let raw: Vec<f64> = (0..seq).map(|i| i as f64).collect();
    let positions = scaling.effective_positions(&raw)?;
    let opts = AttendOptions { causal: true, noise: Some(noise), ..Default::default() };
    let out = layer.forward(&x, &positions, &opts)?;

    let o = &out.output;
    let row_norms: Vec<f64> = (0..o.rows())
        .map(|r| o.row(r).iter().map(|v| v * v).sum::<f64>().sqrt())
        .collect();
    let heads: Vec<Value> = out
        .attend
        .heads
        .iter()
        .enumerate()
        .map(|(h, s)| {
            json!({
                "head": h,
                "kind": s.kind,
                "logit_norm": s.logit_norm,
                "mean_distance": s.mean_distance,
            })
        })
        .collect();
    let l = &layer.layout;
    let mut digest = json!({
        "schema": ATTEND_SCHEMA,
        "variant": l.variant,
        "seq": seq,
        "hidden": layer.hidden,
        "head_dim": l.head_dim,
        "base": base,
        "scaling": scaling,
        "layout": {
            "physical_q_heads": l.physical_q_heads,
            "output_heads": l.output_heads,
            "kv_heads": l.kv_heads,
            "group_size": l.group_size,
        },
        "noise": { "real": sigma_real, "imag": sigma_imag },
        "zero_imag_wo": a.zero_imag_wo,
        "output": {
            "frobenius": o.frobenius(),
            "sum": o.as_slice().iter().sum::<f64>(),
            "max_abs": o.as_slice().iter().fold(0.0f64, |m, v| m.max(v.abs())),
            "row_norms": row_norms,
        },
        "heads": heads,
        "all_masked_rows": out.attend.all_masked.iter().filter(|&&m| m).count(),
    });
    if a.full {
        digest["full"] = json!({
            "output": matrix_rows(o),
            "contexts": matrix_rows(&out.attend.contexts),
        });
    }
    write_json(g, cfg, &digest)
}

fn ratio(a: u64, b: u64) -> f64 {
    a as f64 / b as f64
}

pub fn budget(g: &GlobalArgs, cfg: &RunConfig, a: &BudgetArgs) -> Result<()> {
    let configs = match cfg.model()? {
        Some(m) => vec![m],
        None => ModelConfig::presets(),
    };
    let seqs = cfg.pick_list(a.seqs.clone(), "budget.seqs")?.unwrap_or_else(|| vec![1024, 4096, 32768]);
    let dtype = cfg.pick(a.dtype_bytes, "budget.dtype_bytes")?.unwrap_or(DEFAULT_DTYPE_BYTES);
    if dtype == 0 {
        bail!("--dtype-bytes must be >= 1");
    }
    let mut out = Vec::new();
    for c in &configs {
        let rope_kv = kv_cache_bytes(c, Variant::Rope, dtype)? as u64;
        let rope_p = projection_params(c, Variant::Rope)?;
        let mut variants = Vec::new();
        for v in Variant::ALL {
            let b = Budget::new(c, v, dtype)?;
            let p = projection_params(c, v)?;
            let mut rows = Vec::new();
            for &s in &seqs {
                let f = score_flops(c, v, s)?;
                let r = score_flops(c, Variant::Rope, s)?;
                rows.push(json!({
                    "seq": s,
                    "kv_bytes": b.kv_bytes(s),
                    "flops": f.flops(),
                    "logit_macs": f.logits,
                    "attention_core_macs": f.attention_core(),
                    "flops_ratio_vs_rope": ratio(f.flops(), r.flops()),
                    "logit_ratio_vs_rope": ratio(f.logits, r.logits),
                }));
            }
            variants.push(json!({
                "variant": v,
                "kv_bytes_per_token": b.kv_bytes_per_token,
                "kv_ratio_vs_rope": ratio(b.kv_bytes_per_token as u64, rope_kv),
                "params_per_layer": {
                    "wq": p.wq, "wk": p.wk, "wv": p.wv, "wo": p.wo, "qkv": p.qkv(),
                },
                "qkv_ratio_vs_rope": ratio(p.qkv() as u64, rope_p.qkv() as u64),
                "wo_ratio_vs_rope": ratio(p.wo as u64, rope_p.wo as u64),
                "attention_params_total": b.attention_params_total,
                "seqs": rows,
            }));
        }
        out.push(json!({ "config": c, "variants": variants }));
    }
    let report = json!({
        "schema": BUDGET_SCHEMA,
        "scope": "attention block only (no MLP, embeddings or activations)",
        "dtype_bytes": dtype,
        "configs": out,
    });
    write_json(g, cfg, &report)
}

pub fn bench(g: &GlobalArgs, cfg: &RunConfig, a: &BenchArgs) -> Result<()> {
    let model = cfg.model()?.unwrap_or_else(ModelConfig::preset_376m);
    let variant: Option<String> = cfg.pick(a.variant.clone(), "bench.variant")?;
    let variant = variant.as_deref().map(parse_variant).transpose()?.unwrap_or(Variant::Rope);
    let seqs = cfg.pick_list(a.seqs.clone(), "bench.seqs")?.unwrap_or_else(|| vec![256, 1024, 4096]);
    let repeats = cfg.pick(a.repeats, "bench.repeats")?.unwrap_or(5);
    let float: Option<String> = cfg.pick(g.float.clone(), "float")?;
    let float = match float {
        Some(f) => FloatMode::from_str(&f).map_err(|e| anyhow!("{e}"))?,
        None => FloatMode::F32,
    };
    let seed = cfg.pick(g.seed, "seed")?.unwrap_or(0);
    let report = bench_attend(&model, variant, &seqs, repeats, seed, float)?;
    write_json(g, cfg, &serde_json::to_value(report)?)
}

pub fn weights(g: &GlobalArgs, cfg: &RunConfig, a: &WeightsArgs) -> Result<()> {
    let stem: PathBuf = cfg
        .pick(g.out.clone(), "out")?
        .ok_or_else(|| anyhow!("weights needs --out STEM (writes STEM.json and STEM.bin)"))?;
    let model = cfg.model()?.unwrap_or_else(tiny_model);
    let variant: Option<String> = cfg.pick(a.variant.clone(), "attend.variant")?;
    let variant = variant.as_deref().map(parse_variant).transpose()?.unwrap_or(Variant::Rope);
    let seed = cfg.pick(g.seed, "seed")?.unwrap_or(0);
    let layout = model.layout(variant)?;
    let set = weights::generate(&layout, model.hidden, seed)?;
    let sidecar = weights::save(&set, &layout, model.hidden, &stem)?;
    let summary = json!({
        "schema": weights::WEIGHTS_SCHEMA,
        "sidecar": sidecar,
        "variant": variant,
        "hidden": model.hidden,
        "parameters": set.parameter_count(),
    });
    serde_json::to_writer_pretty(io::stdout().lock(), &summary)?;
    println!();
    Ok(())
}
