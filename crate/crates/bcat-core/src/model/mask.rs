//! Attention masks.
//!
//! Canonical rule, stated over global token positions with N tokens per
//! frame: query q may attend key k iff
//!   block_causal: floor(k/N) <= floor(q/N)
//!   causal:       k <= q
//!   full:         always
//! Block-causal with N = 1 therefore coincides with causal.

use super::config::MaskKind;
use crate::numerics::{mask_sentinel, Element, Tensor};

/// Mask descriptor over a rectangular query/key window. Queries occupy
/// global positions `q_start .. q_start + q_len`, keys `0 .. k_len`
/// (incremental decoding attends a query suffix against all keys so far).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AttentionMask {
    pub kind: MaskKind,
    pub n_per_frame: usize,
    pub q_start: usize,
    pub q_len: usize,
    pub k_len: usize,
}

impl AttentionMask {
    /// Square mask over a full sequence of `n_frames * n_per_frame` tokens.
    pub fn square(kind: MaskKind, n_frames: usize, n_per_frame: usize) -> AttentionMask {
        let s = n_frames * n_per_frame;
        AttentionMask { kind, n_per_frame, q_start: 0, q_len: s, k_len: s }
    }

    /// May global query position `q` attend global key position `k`?
    pub fn allowed(&self, q: usize, k: usize) -> bool {
        allowed(self.kind, self.n_per_frame, q, k)
    }

    /// Materialize as an additive tensor `[q_len][k_len]`: 0 where allowed,
    /// the most-negative-finite-f32 sentinel where not.
    pub fn to_additive<E: Element>(&self) -> Tensor<E> {
        let sentinel = mask_sentinel::<E>();
        let mut data = vec![E::ZERO; self.q_len * self.k_len];
        for qi in 0..self.q_len {
            let q = self.q_start + qi;
            for k in 0..self.k_len {
                if !self.allowed(q, k) {
                    data[qi * self.k_len + k] = sentinel;
                }
            }
        }
        Tensor::new(vec![self.q_len, self.k_len], data).expect("mask shape")
    }

    /// Materialize as booleans (true = may attend), same layout.
    pub fn to_bool(&self) -> Vec<bool> {
        let mut data = vec![false; self.q_len * self.k_len];
        for qi in 0..self.q_len {
            for k in 0..self.k_len {
                data[qi * self.k_len + k] = self.allowed(self.q_start + qi, k);
            }
        }
        data
    }
}

pub fn allowed(kind: MaskKind, n_per_frame: usize, q: usize, k: usize) -> bool {
    match kind {
        MaskKind::BlockCausal => k / n_per_frame <= q / n_per_frame,
        MaskKind::Causal => k <= q,
        MaskKind::Full => true,
    }
}

/// The square [S][S] mask for a full sequence (additive form).
pub fn build_mask<E: Element>(kind: MaskKind, n_frames: usize, n_per_frame: usize) -> Tensor<E> {
    AttentionMask::square(kind, n_frames, n_per_frame).to_additive()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_frames_two_patches_block_rows() {
        let m = AttentionMask::square(MaskKind::BlockCausal, 2, 2);
        let rows: Vec<Vec<bool>> = (0..4)
            .map(|q| (0..4).map(|k| m.allowed(q, k)).collect())
            .collect();
        let want = [
            [true, true, false, false],
            [true, true, false, false],
            [true, true, true, true],
            [true, true, true, true],
        ];
        for (q, row) in rows.iter().enumerate() {
            assert_eq!(row[..], want[q], "row {q}");
        }
    }

    #[test]
    fn block_causal_with_single_patch_equals_causal() {
        for s in [1usize, 5, 17] {
            let a = build_mask::<f32>(MaskKind::BlockCausal, s, 1);
            let b = build_mask::<f32>(MaskKind::Causal, s, 1);
            assert_eq!(a.data(), b.data());
        }
    }

    #[test]
    fn full_mask_is_all_zero() {
        let m = build_mask::<f32>(MaskKind::Full, 3, 4);
        assert!(m.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn rectangular_window_matches_square_slice() {
        // decoding rows q_start.. of the square mask
        let square = AttentionMask::square(MaskKind::BlockCausal, 3, 4);
        let rect = AttentionMask {
            kind: MaskKind::BlockCausal,
            n_per_frame: 4,
            q_start: 8,
            q_len: 4,
            k_len: 12,
        };
        for qi in 0..4 {
            for k in 0..12 {
                assert_eq!(rect.allowed(8 + qi, k), square.allowed(8 + qi, k));
            }
        }
    }
}
