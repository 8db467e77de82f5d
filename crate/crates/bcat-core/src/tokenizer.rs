//! Frame <-> patch-token rearrangement.
//!
//! A frame of shape [H][W][C] splits into (R/P)^2 non-overlapping P x P
//! patches. Token order is raster: frames outermost, then patch rows, then
//! patch columns. Within a patch features are pixel-row-major with the
//! channel innermost, so `patch_dim = P*P*C`. No projection happens here;
//! patchify and depatchify are mutually inverse bijections on the raw
//! values.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum TokenizerError {
    #[error("patch size {patch} does not divide resolution {resolution}")]
    Indivisible { patch: usize, resolution: usize },

    #[error("token count {tokens} is not a multiple of patches per frame {n}")]
    LengthMismatch { tokens: usize, n: usize },

    #[error("buffer length {got} does not match expected {expect}")]
    BadBuffer { expect: usize, got: usize },
}

/// Patch bookkeeping for a fixed resolution/patch-size/channel combination.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PatchGrid {
    pub patch: usize,
    pub resolution: usize,
    pub channels: usize,
}

impl PatchGrid {
    pub fn new(patch: usize, resolution: usize, channels: usize) -> Result<Self, TokenizerError> {
        if patch == 0 || resolution % patch != 0 {
            return Err(TokenizerError::Indivisible { patch, resolution });
        }
        Ok(PatchGrid { patch, resolution, channels })
    }

    /// Patches per side.
    pub fn side(&self) -> usize {
        self.resolution / self.patch
    }

    /// Patches per frame: (R/P)^2.
    pub fn patches_per_frame(&self) -> usize {
        self.side() * self.side()
    }

    /// Flattened feature length of one token.
    pub fn patch_dim(&self) -> usize {
        self.patch * self.patch * self.channels
    }

    /// Frame index of sequence position `s`.
    pub fn frame_of(&self, s: usize) -> usize {
        s / self.patches_per_frame()
    }

    /// Patch index (within its frame) of sequence position `s`.
    pub fn patch_of(&self, s: usize) -> usize {
        s % self.patches_per_frame()
    }
}

/// Rearrange `[T][H][W][C]` frames into `[T*N][patch_dim]` tokens.
pub fn patchify(frames: &[f32], t: usize, grid: &PatchGrid) -> Result<Vec<f32>, TokenizerError> {
    let r = grid.resolution;
    let c = grid.channels;
    let p = grid.patch;
    let expect = t * r * r * c;
    if frames.len() != expect {
        return Err(TokenizerError::BadBuffer { expect, got: frames.len() });
    }
    let side = grid.side();
    let pd = grid.patch_dim();
    let mut tokens = vec![0.0f32; t * grid.patches_per_frame() * pd];
    let mut w = 0usize;
    for ti in 0..t {
        let frame = &frames[ti * r * r * c..(ti + 1) * r * r * c];
        for py in 0..side {
            for px in 0..side {
                for iy in 0..p {
                    let y = py * p + iy;
                    let x0 = px * p;
                    let src = (y * r + x0) * c;
                    tokens[w..w + p * c].copy_from_slice(&frame[src..src + p * c]);
                    w += p * c;
                }
            }
        }
    }
    Ok(tokens)
}

/// Exact inverse of [`patchify`].
pub fn depatchify(tokens: &[f32], grid: &PatchGrid) -> Result<Vec<f32>, TokenizerError> {
    let pd = grid.patch_dim();
    let n = grid.patches_per_frame();
    if pd == 0 || tokens.len() % pd != 0 {
        return Err(TokenizerError::BadBuffer { expect: pd, got: tokens.len() });
    }
    let total_tokens = tokens.len() / pd;
    if total_tokens % n != 0 {
        return Err(TokenizerError::LengthMismatch { tokens: total_tokens, n });
    }
    let t = total_tokens / n;
    let r = grid.resolution;
    let c = grid.channels;
    let p = grid.patch;
    let side = grid.side();
    let mut frames = vec![0.0f32; t * r * r * c];
    let mut rdr = 0usize;
    for ti in 0..t {
        let frame = &mut frames[ti * r * r * c..(ti + 1) * r * r * c];
        for py in 0..side {
            for px in 0..side {
                for iy in 0..p {
                    let y = py * p + iy;
                    let x0 = px * p;
                    let dst = (y * r + x0) * c;
                    frame[dst..dst + p * c].copy_from_slice(&tokens[rdr..rdr + p * c]);
                    rdr += p * c;
                }
            }
        }
    }
    Ok(frames)
}
