//! Deterministic weight generation and the on-disk weight format.
//!
//! Weights are stored as a flat little-endian `f64` blob plus a JSON sidecar:
//!
//! ```json
//! {
//!   "schema": "ropepp.weights.v1",
//!   "dtype": "f64-le",
//!   "blob": "weights.bin",
//!   "variant": "ec",
//!   "hidden": 64,
//!   "base_heads": 4,
//!   "base_kv_heads": 2,
//!   "head_dim": 16,
//!   "tensors": [
//!     { "name": "w_q", "rows": 64, "cols": 64, "offset_bytes": 0 },
//!     ...
//!   ]
//! }
//! ```
//!
//! `blob` is resolved relative to the sidecar. Tensors are row-major.

use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{HeadLayout, Matrix, ProjectionSet};
use crate::error::{invalid, shape, Result};
use crate::Variant;

pub const WEIGHTS_SCHEMA: &str = "ropepp.weights.v1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub offset_bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightsSidecar {
    pub schema: String,
    pub dtype: String,
    pub blob: String,
    pub variant: Variant,
    pub hidden: usize,
    pub base_heads: usize,
    pub base_kv_heads: usize,
    pub head_dim: usize,
    pub tensors: Vec<TensorEntry>,
}

const TAG_Q: u64 = 1;
const TAG_K: u64 = 2;
const TAG_V: u64 = 3;
const TAG_O: u64 = 4;

fn stream_rng(seed: u64, tag: u64, head: usize, sub: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((tag << 48) | ((head as u64) << 8) | sub);
    rng
}

/// Fills columns `[head·d, (head+1)·d)` of a `hidden × width` matrix.
fn fill_column_block(m: &mut Matrix, head: usize, d: usize, rng: &mut ChaCha8Rng, dist: &Normal<f64>) {
    for r in 0..m.rows() {
        for c in head * d..(head + 1) * d {
            m.set(r, c, dist.sample(rng));
        }
    }
}

/// Draws a projection set from `N(0, 1/hidden)`.
///
/// Every head block is drawn from its own stream keyed by the *physical*
/// head it belongs to, so two layouts built from one seed share their query
/// and K/V columns, and the real output heads of EC reuse the RoPE output
/// rows bit-for-bit.
pub fn generate(layout: &HeadLayout, hidden: usize, seed: u64) -> Result<ProjectionSet> {
    if hidden == 0 {
        return Err(invalid("hidden size must be positive"));
    }
    let d = layout.head_dim;
    let dist = Normal::new(0.0, 1.0 / (hidden as f64).sqrt()).expect("positive std");

    let mut w_q = Matrix::zeros(hidden, layout.q_width());
    for p in 0..layout.physical_q_heads {
        fill_column_block(&mut w_q, p, d, &mut stream_rng(seed, TAG_Q, p, 0), &dist);
    }
    let mut w_k = Matrix::zeros(hidden, layout.kv_width());
    let mut w_v = Matrix::zeros(hidden, layout.kv_width());
    for h in 0..layout.kv_heads {
        fill_column_block(&mut w_k, h, d, &mut stream_rng(seed, TAG_K, h, 0), &dist);
        fill_column_block(&mut w_v, h, d, &mut stream_rng(seed, TAG_V, h, 0), &dist);
    }
    let mut w_o = Matrix::zeros(layout.output_width(), hidden);
    for o in 0..layout.output_heads {
        let parity = if layout.variant.has_imaginary() { (o % 2) as u64 } else { 0 };
        let mut rng = stream_rng(seed, TAG_O, layout.physical_of(o), parity);
        for r in o * d..(o + 1) * d {
            for x in w_o.row_mut(r) {
                *x = dist.sample(&mut rng);
            }
        }
    }
    ProjectionSet::new(layout, hidden, w_q, w_k, w_v, w_o)
}

/// Writes `<stem>.json` and `<stem>.bin`; returns the sidecar path.
pub fn save(
    weights: &ProjectionSet,
    layout: &HeadLayout,
    hidden: usize,
    stem: &Path,
) -> Result<PathBuf> {
    weights.check(layout, hidden)?;
    let json_path = stem.with_extension("json");
    let bin_path = stem.with_extension("bin");
    let mut blob = Vec::with_capacity(weights.parameter_count() * 8);
    let mut tensors = Vec::new();
    for (name, m) in [
        ("w_q", &weights.w_q),
        ("w_k", &weights.w_k),
        ("w_v", &weights.w_v),
        ("w_o", &weights.w_o),
    ] {
        tensors.push(TensorEntry {
            name: name.to_string(),
            rows: m.rows(),
            cols: m.cols(),
            offset_bytes: blob.len() as u64,
        });
        for x in m.as_slice() {
            blob.extend_from_slice(&x.to_le_bytes());
        }
    }
    let sidecar = WeightsSidecar {
        schema: WEIGHTS_SCHEMA.to_string(),
        dtype: "f64-le".to_string(),
        blob: bin_path
            .file_name()
            .map(|s| s.to_string_lossy().into_owned())
            .ok_or_else(|| invalid("weights path has no file name"))?,
        variant: layout.variant,
        hidden,
        base_heads: layout.base_heads,
        base_kv_heads: layout.base_kv_heads,
        head_dim: layout.head_dim,
        tensors,
    };
    fs::write(&bin_path, blob)?;
    fs::write(&json_path, serde_json::to_string_pretty(&sidecar)?)?;
    Ok(json_path)
}

/// Reads a sidecar and its blob.
pub fn load(sidecar_path: &Path) -> Result<(HeadLayout, usize, ProjectionSet)> {
    let sidecar: WeightsSidecar = serde_json::from_str(&fs::read_to_string(sidecar_path)?)?;
    if sidecar.schema != WEIGHTS_SCHEMA {
        return Err(invalid(format!("unsupported weights schema '{}'", sidecar.schema)));
    }
    if sidecar.dtype != "f64-le" {
        return Err(invalid(format!("unsupported weights dtype '{}'", sidecar.dtype)));
    }
    let layout = HeadLayout::new(
        sidecar.variant,
        sidecar.base_heads,
        sidecar.base_kv_heads,
        sidecar.head_dim,
    )?;
    let blob_path = sidecar_path
        .parent()
        .unwrap_or_else(|| Path::new("."))
        .join(&sidecar.blob);
    let blob = fs::read(blob_path)?;
    let tensor = |name: &str| -> Result<Matrix> {
        let e = sidecar
            .tensors
            .iter()
            .find(|t| t.name == name)
            .ok_or_else(|| invalid(format!("weights file lacks tensor '{name}'")))?;
        let start = e.offset_bytes as usize;
        let end = start + e.rows * e.cols * 8;
        let bytes = blob
            .get(start..end)
            .ok_or_else(|| shape(format!("tensor '{name}' runs past the end of the blob")))?;
        let data = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        Matrix::from_vec(e.rows, e.cols, data)
    };
    let set = ProjectionSet::new(
        &layout,
        sidecar.hidden,
        tensor("w_q")?,
        tensor("w_k")?,
        tensor("w_v")?,
        tensor("w_o")?,
    )?;
    Ok((layout, sidecar.hidden, set))
}
