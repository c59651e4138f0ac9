#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use ropepp::attention::Matrix;
use ropepp::PairVector;

pub const EULER_GAMMA: f64 = 0.577_215_664_901_532_860_606_512_090_082;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_pv(rng: &mut ChaCha8Rng, d: usize) -> PairVector {
    PairVector::new((0..d).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

pub fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.gen_range(-1.0..1.0))
}

pub fn positions(n: usize, offset: f64) -> Vec<f64> {
    (0..n).map(|i| offset + i as f64).collect()
}

/// Composite Simpson rule on `[a, b]` with `n` (even) panels.
pub fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
    let n = n + n % 2;
    let h = (b - a) / n as f64;
    let mut acc = f(a) + f(b);
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        acc += w * f(a + i as f64 * h);
    }
    acc * h / 3.0
}

fn sinc(t: f64) -> f64 {
    if t == 0.0 {
        1.0
    } else {
        t.sin() / t
    }
}

/// Si by direct quadrature of `sin t / t`, about 200 panels per unit length.
pub fn si_quadrature(x: f64) -> f64 {
    let panels = ((x.abs() * 200.0).ceil() as usize).max(200);
    simpson(sinc, 0.0, x, panels)
}

/// Ci via `γ + ln x + ∫₀ˣ (cos t − 1)/t dt`.
pub fn ci_quadrature(x: f64) -> f64 {
    let f = |t: f64| if t == 0.0 { 0.0 } else { (t.cos() - 1.0) / t };
    let panels = ((x * 200.0).ceil() as usize).max(200);
    EULER_GAMMA + x.ln() + simpson(f, 0.0, x, panels)
}

/// Textbook multi-head attention written independently of the library:
/// rotate with `std` trig, loop over heads, softmax, weighted sum.
///
/// `q` is already expanded to one block per output head. Returns
/// `[seq × heads·d]`.
pub fn naive_attention(
    q: &Matrix,
    k: &Matrix,
    v: &Matrix,
    positions: &[f64],
    heads: usize,
    kv_of: impl Fn(usize) -> usize,
    d: usize,
    base: f64,
    causal: bool,
) -> Matrix {
    let seq = positions.len();
    let theta: Vec<f64> = (0..d / 2).map(|n| base.powf(-2.0 * n as f64 / d as f64)).collect();
    let rot = |src: &[f64], pos: f64| -> Vec<f64> {
        let mut out = vec![0.0; d];
        for n in 0..d / 2 {
            let (s, c) = (theta[n] * pos).sin_cos();
            out[2 * n] = src[2 * n] * c - src[2 * n + 1] * s;
            out[2 * n + 1] = src[2 * n] * s + src[2 * n + 1] * c;
        }
        out
    };
    let mut out = Matrix::zeros(seq, heads * d);
    for h in 0..heads {
        let g = kv_of(h);
        for t in 0..seq {
            let qt = rot(&q.row(t)[h * d..(h + 1) * d], positions[t]);
            let mut logits = vec![f64::NEG_INFINITY; seq];
            for s in 0..seq {
                if causal && positions[s] > positions[t] {
                    continue;
                }
                let ks = rot(&k.row(s)[g * d..(g + 1) * d], positions[s]);
                logits[s] = qt.iter().zip(&ks).map(|(a, b)| a * b).sum::<f64>() / (d as f64).sqrt();
            }
            let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let w: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
            let z: f64 = w.iter().sum();
            for s in 0..seq {
                for j in 0..d {
                    let cur = out.get(t, h * d + j);
                    out.set(t, h * d + j, cur + w[s] / z * v.get(s, g * d + j));
                }
            }
        }
    }
    out
}

/// Schoolbook `a · b`.
pub fn naive_matmul(a: &Matrix, b: &Matrix) -> Matrix {
    let mut out = Matrix::zeros(a.rows(), b.cols());
    for i in 0..a.rows() {
        for j in 0..b.cols() {
            let mut acc = 0.0;
            for k in 0..a.cols() {
                acc += a.get(i, k) * b.get(k, j);
            }
            out.set(i, j, acc);
        }
    }
    out
}
