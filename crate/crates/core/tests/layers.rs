mod common;

use common::*;
use ropepp::attention::{
    attend, build_layout, expand_queries, weights, AttendOptions, AttentionLayer, Matrix,
};
use ropepp::rotary::build_thetas;
use ropepp::scaling::ScalingSpec;
use ropepp::Variant;

#[test]
fn attend_matches_naive_reference_for_every_variant() {
    let d = 8;
    let params = build_thetas(d, 10_000.0).unwrap();
    for variant in Variant::ALL {
        let layout = build_layout(variant, 4, 2, d).unwrap();
        let mut rng = rng(1);
        let seq = 9;
        let q = random_matrix(&mut rng, seq, layout.q_width());
        let k = random_matrix(&mut rng, seq, layout.kv_width());
        let v = random_matrix(&mut rng, seq, layout.kv_width());
        let pos = positions(seq, 3.0);
        let got = attend(&q, &k, &v, &pos, &layout, &params, &AttendOptions::causal()).unwrap();
        let expanded = expand_queries(&q, &layout).unwrap();
        let want = naive_attention(&expanded, &k, &v, &pos, layout.output_heads, |o| layout.kv_of(o), d, 10_000.0, true);
        let dev = got.contexts.max_abs_diff(&want).unwrap();
        assert!(dev < 1e-12, "{variant}: {dev}");
    }
}

#[test]
fn layer_forward_matches_naive_matmuls() {
    let params = build_thetas(8, 10_000.0).unwrap();
    let layer = AttentionLayer::random(Variant::Ec, 32, 4, 2, params, 4).unwrap();
    let x = random_matrix(&mut rng(2), 5, 32);
    let out = layer.forward(&x, &positions(5, 0.0), &AttendOptions::causal()).unwrap();
    let q = naive_matmul(&x, &layer.weights.w_q);
    let k = naive_matmul(&x, &layer.weights.w_k);
    let v = naive_matmul(&x, &layer.weights.w_v);
    let ctx = naive_attention(
        &expand_queries(&q, &layer.layout).unwrap(),
        &k,
        &v,
        &positions(5, 0.0),
        layer.layout.output_heads,
        |o| layer.layout.kv_of(o),
        8,
        10_000.0,
        true,
    );
    let want = naive_matmul(&ctx, &layer.weights.w_o);
    assert!(out.output.max_abs_diff(&want).unwrap() < 1e-12);
}

#[test]
fn causal_outputs_ignore_future_tokens() {
    let params = build_thetas(16, 10_000.0).unwrap();
    let mut rng = rng(3);
    for variant in Variant::ALL {
        let layer = AttentionLayer::random(variant, 64, 4, 2, params.clone(), 8).unwrap();
        let x = random_matrix(&mut rng, 12, 64);
        let mut y = x.clone();
        for c in 0..64 {
            y.set(11, c, -y.get(11, c) + 0.5);
            y.set(10, c, 3.0);
        }
        let pos = positions(12, 0.0);
        let a = layer.forward(&x, &pos, &AttendOptions::causal()).unwrap().output;
        let b = layer.forward(&y, &pos, &AttendOptions::causal()).unwrap().output;
        for t in 0..10 {
            assert_eq!(a.row(t), b.row(t), "{variant} row {t}");
        }
        assert_ne!(a.row(11), b.row(11));
    }
}

#[test]
fn eh_consumes_half_the_key_value_columns() {
    let params = build_thetas(16, 10_000.0).unwrap();
    let rope = AttentionLayer::random(Variant::Rope, 64, 4, 2, params.clone(), 1).unwrap();
    let eh = AttentionLayer::random(Variant::Eh, 64, 4, 2, params, 1).unwrap();
    let x = random_matrix(&mut rng(4), 10, 64);
    let pos = positions(10, 0.0);
    let r = rope.forward(&x, &pos, &AttendOptions::causal()).unwrap();
    let h = eh.forward(&x, &pos, &AttendOptions::causal()).unwrap();
    assert_eq!(r.keys.rows(), h.keys.rows());
    assert_eq!(2 * h.keys.cols(), r.keys.cols());
    assert_eq!(2 * h.values.cols(), r.values.cols());
    assert_eq!(h.output.shape(), r.output.shape());
    assert_eq!(h.attend.heads.len(), r.attend.heads.len());
}

#[test]
fn padded_keys_are_ignored() {
    let params = build_thetas(8, 10_000.0).unwrap();
    let layer = AttentionLayer::random(Variant::Eh, 32, 2, 2, params, 5).unwrap();
    let mut rng = rng(5);
    let x = random_matrix(&mut rng, 6, 32);
    let mut padded = Matrix::zeros(8, 32);
    for t in 0..6 {
        padded.row_mut(t).copy_from_slice(x.row(t));
    }
    for t in 6..8 {
        for c in 0..32 {
            padded.set(t, c, 9.0);
        }
    }
    let mask: Vec<bool> = (0..8).map(|t| t < 6).collect();
    let opts = AttendOptions { causal: false, key_mask: Some(mask), ..Default::default() };
    let a = layer.forward(&x, &positions(6, 0.0), &AttendOptions::default()).unwrap().output;
    let b = layer.forward(&padded, &positions(8, 0.0), &opts).unwrap().output;
    for t in 0..6 {
        for c in 0..32 {
            assert!((a.get(t, c) - b.get(t, c)).abs() < 1e-12);
        }
    }
}

#[test]
fn linear_pi_equals_rotating_scaled_positions() {
    let params = build_thetas(16, 10_000.0).unwrap();
    let layer = AttentionLayer::random(Variant::Ec, 64, 4, 2, params.clone(), 6).unwrap();
    let x = random_matrix(&mut rng(6), 7, 64);
    let spec = ScalingSpec::LinearPi { factor: 4.0 };
    let raw = positions(7, 0.0);
    let scaled = spec.effective_positions(&raw).unwrap();
    assert_eq!(scaled[3], 0.75);
    let a = layer.forward(&x, &scaled, &AttendOptions::causal()).unwrap();
    assert!(a.output.as_slice().iter().all(|v| v.is_finite()));

    let ntk = ScalingSpec::NtkRebase { new_base: 500_000.0 };
    let rebased = ntk.apply_params(&params).unwrap();
    assert!(rebased.thetas()[1] < params.thetas()[1]);
    assert_eq!(rebased.thetas()[0], 1.0);
}

#[test]
fn weights_round_trip_through_sidecar() {
    let dir = std::env::temp_dir().join(format!("ropepp-weights-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let layout = build_layout(Variant::Eh, 4, 2, 8).unwrap();
    let w = weights::generate(&layout, 32, 17).unwrap();
    let json = weights::save(&w, &layout, 32, &dir.join("eh")).unwrap();
    let (l2, hidden, w2) = weights::load(&json).unwrap();
    assert_eq!(l2, layout);
    assert_eq!(hidden, 32);
    assert_eq!(w2, w);
    std::fs::remove_dir_all(&dir).unwrap();
}
