//! 3D patchification: videos to flattened spatio-temporal patch sequences
//! and back.
//!
//! The canonical patch order is temporal-major, then row-major spatial:
//! patch index = `tc * (H/p)*(W/p) + py * (W/p) + px` for time chunk `tc`
//! and spatial cell `(py, px)`. Contiguous blocks of `L/K` patch indices
//! therefore cover contiguous frame spans, which is what makes the block
//! partition temporally causal. No learned projection is applied: a patch
//! row holds raw pixels.

use crate::error::{Error, Result};
use crate::util::Mat;
use crate::video::VideoClip;

/// Patch grid and latent capacity configuration.
///
/// `t`/`p` are the temporal/spatial patch sizes, `k` the block count and
/// `m` the per-block latent capacity. The patch embedding width is the raw
/// patch size `t*p*p*C`; see [`PatchConfig::patch_dim`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PatchConfig {
    pub t: usize,
    pub p: usize,
    pub k: usize,
    pub m: usize,
}

impl PatchConfig {
    pub fn new(t: usize, p: usize, k: usize, m: usize) -> Result<Self> {
        if t == 0 || p == 0 || k == 0 || m == 0 {
            return Err(Error::InvalidParam(
                "patch config fields must be positive".into(),
            ));
        }
        Ok(PatchConfig { t, p, k, m })
    }

    /// Total latent capacity `N = M * K`.
    pub fn latent_capacity(&self) -> usize {
        self.m * self.k
    }

    /// Raw patch width for a given channel count.
    pub fn patch_dim(&self, channels: usize) -> usize {
        self.t * self.p * self.p * channels
    }

    /// Patch count for a clip, after validating every divisibility rule:
    /// `T % t == 0`, `H % p == 0`, `W % p == 0`, `L % K == 0`, and block
    /// boundaries aligned to whole time chunks (`(T/t) % K == 0`).
    pub fn patch_count(&self, clip_t: usize, clip_h: usize, clip_w: usize) -> Result<usize> {
        if clip_t % self.t != 0 {
            return Err(Error::DimensionMismatch(format!(
                "frame count {clip_t} not divisible by temporal patch size {}",
                self.t
            )));
        }
        if clip_h % self.p != 0 || clip_w % self.p != 0 {
            return Err(Error::DimensionMismatch(format!(
                "spatial dims {clip_h}x{clip_w} not divisible by patch size {}",
                self.p
            )));
        }
        let chunks = clip_t / self.t;
        let cells = (clip_h / self.p) * (clip_w / self.p);
        let l = chunks * cells;
        if l % self.k != 0 {
            return Err(Error::DimensionMismatch(format!(
                "patch count {l} not divisible by block count {}",
                self.k
            )));
        }
        // Blocks must cover whole time chunks; anything else would split a
        // temporal patch across two blocks.
        if chunks % self.k != 0 {
            return Err(Error::DimensionMismatch(format!(
                "time chunk count {chunks} not divisible by block count {}",
                self.k
            )));
        }
        Ok(l)
    }

    /// Frame span `[start, end)` covered by a block.
    pub fn block_frame_span(&self, block: usize, clip_t: usize) -> (usize, usize) {
        let frames_per_block = clip_t / self.k;
        (block * frames_per_block, (block + 1) * frames_per_block)
    }
}

/// Flattened patch rows plus the row-to-grid-index map.
///
/// `order[i]` gives the canonical patch index of row `i`; [`patchify`]
/// produces the identity map, and [`unpatchify`] honors arbitrary
/// permutations so reordered sequences still reconstruct.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchSequence {
    pub patches: Mat,
    pub order: Vec<usize>,
}

/// Split a clip into non-overlapping `t x p x p` patches, flattened row-wise.
pub fn patchify(clip: &VideoClip, cfg: &PatchConfig) -> Result<PatchSequence> {
    let l = cfg.patch_count(clip.t, clip.h, clip.w)?;
    let cells_y = clip.h / cfg.p;
    let cells_x = clip.w / cfg.p;
    let dim = cfg.patch_dim(clip.c);
    let mut patches = Mat::zeros(l, dim);
    for idx in 0..l {
        let (tc, py, px) = grid_coords(idx, cells_y, cells_x);
        let row = patches.row_mut(idx);
        let mut j = 0;
        for dt in 0..cfg.t {
            for dy in 0..cfg.p {
                for dx in 0..cfg.p {
                    for ch in 0..clip.c {
                        row[j] = clip.at(tc * cfg.t + dt, py * cfg.p + dy, px * cfg.p + dx, ch);
                        j += 1;
                    }
                }
            }
        }
    }
    Ok(PatchSequence { patches, order: (0..l).collect() })
}

/// Exact inverse of [`patchify`]. Rows are scattered according to
/// `seq.order`, so a permuted sequence with a corrected map reconstructs.
pub fn unpatchify(
    seq: &PatchSequence,
    cfg: &PatchConfig,
    dims: (usize, usize, usize, usize),
) -> Result<VideoClip> {
    let (t, h, w, c) = dims;
    let l = cfg.patch_count(t, h, w)?;
    if seq.patches.rows != l || seq.order.len() != l {
        return Err(Error::DimensionMismatch(format!(
            "sequence has {} rows / {} order entries, dims imply {l}",
            seq.patches.rows,
            seq.order.len()
        )));
    }
    if seq.patches.cols != cfg.patch_dim(c) {
        return Err(Error::DimensionMismatch(format!(
            "patch width {} does not match t*p*p*C = {}",
            seq.patches.cols,
            cfg.patch_dim(c)
        )));
    }
    let mut seen = vec![false; l];
    for &idx in &seq.order {
        if idx >= l || seen[idx] {
            return Err(Error::DimensionMismatch(
                "order map is not a bijection onto the patch grid".into(),
            ));
        }
        seen[idx] = true;
    }
    let cells_y = h / cfg.p;
    let cells_x = w / cfg.p;
    let mut clip = VideoClip::zeros(t, h, w, c);
    for r in 0..l {
        let (tc, py, px) = grid_coords(seq.order[r], cells_y, cells_x);
        let row = seq.patches.row(r);
        let mut j = 0;
        for dt in 0..cfg.t {
            for dy in 0..cfg.p {
                for dx in 0..cfg.p {
                    for ch in 0..c {
                        clip.set(tc * cfg.t + dt, py * cfg.p + dy, px * cfg.p + dx, ch, row[j]);
                        j += 1;
                    }
                }
            }
        }
    }
    Ok(clip)
}

/// Temporal block owning a patch index: `floor(idx / (L/K))`.
pub fn block_of(patch_index: usize, cfg: &PatchConfig, l: usize) -> Result<usize> {
    if patch_index >= l {
        return Err(Error::IndexOutOfRange { what: "patch", index: patch_index, limit: l });
    }
    Ok(patch_index / (l / cfg.k))
}

fn grid_coords(idx: usize, cells_y: usize, cells_x: usize) -> (usize, usize, usize) {
    let per_chunk = cells_y * cells_x;
    let tc = idx / per_chunk;
    let rem = idx % per_chunk;
    (tc, rem / cells_x, rem % cells_x)
}
