use serde::{Deserialize, Serialize};

use super::Matrix;
use crate::error::{invalid, shape, Result};
use crate::rotary::ScoreKind;
use crate::Variant;

/// Head bookkeeping for one attention block.
///
/// `base_heads` / `base_kv_heads` describe the reference RoPE model. The
/// variant then fixes how many query heads are projected (`physical_q_heads`),
/// how many heads reach the output projection (`output_heads`) and how many
/// K/V heads are cached (`kv_heads`).
///
/// For EH and EC every physical query head `p` produces two output heads:
/// `2p` (real) and `2p + 1` (imaginary), both reading the same K/V head.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HeadLayout {
    pub variant: Variant,
    pub base_heads: usize,
    pub base_kv_heads: usize,
    pub head_dim: usize,
    pub physical_q_heads: usize,
    pub output_heads: usize,
    pub kv_heads: usize,
    /// Output heads sharing one K/V head.
    pub group_size: usize,
}

impl HeadLayout {
    pub fn new(
        variant: Variant,
        base_heads: usize,
        base_kv_heads: usize,
        head_dim: usize,
    ) -> Result<Self> {
        if base_heads == 0 {
            return Err(invalid("base_heads must be positive"));
        }
        if base_kv_heads == 0 {
            return Err(invalid("base_kv_heads must be positive"));
        }
        if head_dim < 2 || head_dim % 2 != 0 {
            return Err(invalid(format!("head_dim must be even and >= 2, got {head_dim}")));
        }
        if base_heads % base_kv_heads != 0 {
            return Err(invalid(format!(
                "base_heads ({base_heads}) must be divisible by base_kv_heads ({base_kv_heads})"
            )));
        }
        let (physical_q_heads, output_heads, kv_heads) = match variant {
            Variant::Rope => (base_heads, base_heads, base_kv_heads),
            Variant::Ec => (base_heads, 2 * base_heads, base_kv_heads),
            Variant::Eh => {
                if base_heads % 2 != 0 {
                    return Err(invalid(format!("EH requires even base_heads, got {base_heads}")));
                }
                if base_kv_heads % 2 != 0 {
                    return Err(invalid(format!(
                        "EH requires even base_kv_heads, got {base_kv_heads}"
                    )));
                }
                (base_heads / 2, base_heads, base_kv_heads / 2)
            }
        };
        Ok(Self {
            variant,
            base_heads,
            base_kv_heads,
            head_dim,
            physical_q_heads,
            output_heads,
            kv_heads,
            group_size: output_heads / kv_heads,
        })
    }

    /// Physical query head feeding output head `o`.
    pub fn physical_of(&self, o: usize) -> usize {
        if self.variant.has_imaginary() {
            o / 2
        } else {
            o
        }
    }

    /// K/V head read by output head `o`.
    pub fn kv_of(&self, o: usize) -> usize {
        self.physical_of(o) / (self.physical_q_heads / self.kv_heads)
    }

    pub fn head_kind(&self, o: usize) -> ScoreKind {
        if self.variant.has_imaginary() && o % 2 == 1 {
            ScoreKind::Imag
        } else {
            ScoreKind::Real
        }
    }

    pub fn q_width(&self) -> usize {
        self.physical_q_heads * self.head_dim
    }

    pub fn kv_width(&self) -> usize {
        self.kv_heads * self.head_dim
    }

    pub fn output_width(&self) -> usize {
        self.output_heads * self.head_dim
    }
}

/// Builds a [`HeadLayout`], naming the failing constraint on error.
pub fn build_layout(
    variant: Variant,
    base_heads: usize,
    base_kv_heads: usize,
    head_dim: usize,
) -> Result<HeadLayout> {
    HeadLayout::new(variant, base_heads, base_kv_heads, head_dim)
}

/// Projection weights for one attention block (no biases).
///
/// There is exactly one query projection; imaginary heads reuse its columns.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionSet {
    pub w_q: Matrix,
    pub w_k: Matrix,
    pub w_v: Matrix,
    pub w_o: Matrix,
}

impl ProjectionSet {
    pub fn new(
        layout: &HeadLayout,
        hidden: usize,
        w_q: Matrix,
        w_k: Matrix,
        w_v: Matrix,
        w_o: Matrix,
    ) -> Result<Self> {
        let set = Self { w_q, w_k, w_v, w_o };
        set.check(layout, hidden)?;
        Ok(set)
    }

    pub fn check(&self, layout: &HeadLayout, hidden: usize) -> Result<()> {
        let expect = [
            ("w_q", &self.w_q, (hidden, layout.q_width())),
            ("w_k", &self.w_k, (hidden, layout.kv_width())),
            ("w_v", &self.w_v, (hidden, layout.kv_width())),
            ("w_o", &self.w_o, (layout.output_width(), hidden)),
        ];
        for (name, m, want) in expect {
            if m.shape() != want {
                return Err(shape(format!(
                    "{name} is {}x{}, layout {} needs {}x{}",
                    m.rows(),
                    m.cols(),
                    layout.variant,
                    want.0,
                    want.1
                )));
            }
        }
        Ok(())
    }

    /// Zeroes the `w_o` rows belonging to imaginary output heads.
    pub fn zero_imaginary_output(&mut self, layout: &HeadLayout) {
        let d = layout.head_dim;
        for o in (0..layout.output_heads).filter(|&o| layout.head_kind(o) == ScoreKind::Imag) {
            for r in o * d..(o + 1) * d {
                self.w_o.row_mut(r).fill(0.0);
            }
        }
    }

    pub fn parameter_count(&self) -> usize {
        [&self.w_q, &self.w_k, &self.w_v, &self.w_o]
            .iter()
            .map(|m| m.rows() * m.cols())
            .sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layouts_for_the_small_config() {
        let rope = build_layout(Variant::Rope, 8, 4, 128).unwrap();
        assert_eq!((rope.physical_q_heads, rope.output_heads, rope.kv_heads), (8, 8, 4));
        let ec = build_layout(Variant::Ec, 8, 4, 128).unwrap();
        assert_eq!((ec.physical_q_heads, ec.output_heads, ec.kv_heads), (8, 16, 4));
        assert_eq!(ec.group_size, 2 * rope.group_size);
        let eh = build_layout(Variant::Eh, 8, 4, 128).unwrap();
        assert_eq!((eh.physical_q_heads, eh.output_heads, eh.kv_heads), (4, 8, 2));
    }

    #[test]
    fn layout_errors_name_the_constraint() {
        let e = build_layout(Variant::Rope, 6, 4, 64).unwrap_err().to_string();
        assert!(e.contains("divisible"), "{e}");
        let e = build_layout(Variant::Eh, 6, 3, 64).unwrap_err().to_string();
        assert!(e.contains("even base_kv_heads"), "{e}");
        let e = build_layout(Variant::Eh, 3, 1, 64).unwrap_err().to_string();
        assert!(e.contains("even base_heads"), "{e}");
        assert!(build_layout(Variant::Rope, 4, 2, 7).is_err());
        assert!(build_layout(Variant::Rope, 0, 1, 8).is_err());
        assert!(build_layout(Variant::Rope, 4, 0, 8).is_err());
    }

    #[test]
    fn head_routing() {
        let ec = build_layout(Variant::Ec, 4, 2, 8).unwrap();
        let kinds: Vec<_> = (0..8).map(|o| ec.head_kind(o)).collect();
        assert_eq!(kinds[0], ScoreKind::Real);
        assert_eq!(kinds[1], ScoreKind::Imag);
        let kv: Vec<_> = (0..8).map(|o| ec.kv_of(o)).collect();
        assert_eq!(kv, vec![0, 0, 0, 0, 1, 1, 1, 1]);
        let eh = build_layout(Variant::Eh, 4, 2, 8).unwrap();
        assert_eq!(eh.kv_heads, 1);
        assert!((0..4).all(|o| eh.kv_of(o) == 0));
        let eh = build_layout(Variant::Eh, 8, 4, 8).unwrap();
        let kv: Vec<_> = (0..8).map(|o| eh.kv_of(o)).collect();
        assert_eq!(kv, vec![0, 0, 0, 0, 1, 1, 1, 1]);
        let rope = build_layout(Variant::Rope, 4, 2, 8).unwrap();
        assert!((0..4).all(|o| rope.head_kind(o) == ScoreKind::Real));
        assert_eq!((0..4).map(|o| rope.kv_of(o)).collect::<Vec<_>>(), vec![0, 0, 1, 1]);
    }
}
