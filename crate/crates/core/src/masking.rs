//! Block-causal attention masks, latent tail-drop masks, and the
//! truncated-Gaussian block-length sampler.
//!
//! Three mask families share one causality rule — no position may attend
//! to a later block — but differ in which token kinds see which:
//!
//! * encoder: image tokens then latent tokens; visibility is symmetric
//!   within a block and causal across blocks. (A one-directional variant,
//!   image-to-latent only, would also satisfy the causality tests; the
//!   symmetric form is what these constructors produce.)
//! * decoder: quantized latents then image queries; latents attend only to
//!   latents of the same or earlier blocks, image queries attend to image
//!   queries of their own block plus latents of the same or earlier blocks.
//! * scorer: continuous latents then quantized latents, block-causal
//!   across both halves.
//!
//! Masks are materialized as explicit boolean matrices at desk scale; the
//! run-length [`MaskRuns`] form covers large shapes and doubles as an
//! independent construction route in tests.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::util::Mat;

/// What a mask position holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TokenKind {
    Image,
    Latent,
    QuantLatent,
}

/// Per-position tag: token kind and owning block.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PosLabel {
    pub kind: TokenKind,
    pub block: usize,
}

/// Boolean attention mask with per-position labels.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionMask {
    pub n: usize,
    allow: Vec<bool>,
    pub labels: Vec<PosLabel>,
}

impl AttentionMask {
    fn all_false(labels: Vec<PosLabel>) -> Self {
        let n = labels.len();
        AttentionMask { n, allow: vec![false; n * n], labels }
    }

    #[inline]
    pub fn allowed(&self, r: usize, c: usize) -> bool {
        self.allow[r * self.n + c]
    }

    #[inline]
    fn set(&mut self, r: usize, c: usize, v: bool) {
        self.allow[r * self.n + c] = v;
    }

    /// True when no entry attends to a strictly later block.
    pub fn is_block_causal(&self) -> bool {
        for r in 0..self.n {
            for c in 0..self.n {
                if self.allowed(r, c) && self.labels[c].block > self.labels[r].block {
                    return false;
                }
            }
        }
        true
    }

    /// Delete the rows and columns whose indices are not in `keep`,
    /// preserving order.
    pub fn reduce(&self, keep: &[usize]) -> Result<AttentionMask> {
        for &i in keep {
            if i >= self.n {
                return Err(Error::IndexOutOfRange { what: "mask position", index: i, limit: self.n });
            }
        }
        let labels: Vec<PosLabel> = keep.iter().map(|&i| self.labels[i]).collect();
        let mut out = AttentionMask::all_false(labels);
        for (rr, &r) in keep.iter().enumerate() {
            for (cc, &c) in keep.iter().enumerate() {
                out.set(rr, cc, self.allowed(r, c));
            }
        }
        Ok(out)
    }

    /// ASCII PBM (P1) rendering, 1 = attend allowed.
    pub fn to_pbm(&self) -> String {
        let mut s = String::new();
        s.push_str("P1\n");
        s.push_str(&format!("{} {}\n", self.n, self.n));
        for r in 0..self.n {
            let row: Vec<&str> = (0..self.n)
                .map(|c| if self.allowed(r, c) { "1" } else { "0" })
                .collect();
            s.push_str(&row.join(" "));
            s.push('\n');
        }
        s
    }
}

/// Binary latent mask with per-block prefix structure.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LatentMask {
    pub bits: Vec<bool>,
    pub lengths: Vec<usize>,
    pub m: usize,
}

impl LatentMask {
    pub fn retained(&self) -> usize {
        self.lengths.iter().sum()
    }
}

/// Per-block prefix mask: within block `i`, positions `j < lengths[i]` are
/// set.
pub fn latent_mask(lengths: &[usize], m: usize) -> Result<LatentMask> {
    let mut bits = Vec::with_capacity(lengths.len() * m);
    for (block, &len) in lengths.iter().enumerate() {
        if len > m {
            return Err(Error::LengthOutOfRange { block, length: len, max: m });
        }
        for j in 0..m {
            bits.push(j < len);
        }
    }
    Ok(LatentMask { bits, lengths: lengths.to_vec(), m })
}

/// Truncated-Gaussian sampler parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SamplerParams {
    pub mu: f64,
    pub sigma: f64,
    pub min_tokens: usize,
    pub max_tokens: usize,
}

impl SamplerParams {
    pub fn new(mu: f64, sigma: f64, min_tokens: usize, max_tokens: usize) -> Result<Self> {
        if min_tokens < 1 || min_tokens > max_tokens {
            return Err(Error::InvalidParam(format!(
                "token bounds [{min_tokens}, {max_tokens}] invalid"
            )));
        }
        if sigma.is_nan() || sigma <= 0.0 || !mu.is_finite() {
            return Err(Error::InvalidParam(format!("mu {mu} / sigma {sigma} invalid")));
        }
        Ok(SamplerParams { mu, sigma, min_tokens, max_tokens })
    }
}

/// Draw K block lengths: sample `Normal(mu, sigma)`, redraw until the real
/// value lands in `[min, max]`, round to nearest, clamp.
pub fn sample_lengths<R: Rng + ?Sized>(
    rng: &mut R,
    k: usize,
    params: &SamplerParams,
) -> Vec<usize> {
    // A single-point window would reject almost surely.
    if params.min_tokens == params.max_tokens {
        return vec![params.min_tokens; k];
    }
    let normal = Normal::new(params.mu, params.sigma).expect("validated params");
    let lo = params.min_tokens as f64;
    let hi = params.max_tokens as f64;
    (0..k)
        .map(|_| {
            let v = loop {
                let x = normal.sample(rng);
                if (lo..=hi).contains(&x) {
                    break x;
                }
            };
            (v.round() as usize).clamp(params.min_tokens, params.max_tokens)
        })
        .collect()
}

fn image_labels(l: usize, k: usize) -> Vec<PosLabel> {
    let per_block = l / k;
    (0..l)
        .map(|i| PosLabel { kind: TokenKind::Image, block: i / per_block })
        .collect()
}

fn latent_labels(k: usize, m: usize, kind: TokenKind) -> Vec<PosLabel> {
    (0..k * m).map(|j| PosLabel { kind, block: j / m }).collect()
}

/// Encoder mask over `L` image positions followed by `N = M*K` latent
/// positions: attend iff `block(col) <= block(row)`.
pub fn encoder_mask(l: usize, k: usize, m: usize) -> Result<AttentionMask> {
    if l == 0 || k == 0 || l % k != 0 {
        return Err(Error::DimensionMismatch(format!(
            "L = {l} must be positive and divisible by K = {k}"
        )));
    }
    let mut labels = image_labels(l, k);
    labels.extend(latent_labels(k, m, TokenKind::Latent));
    let mut mask = AttentionMask::all_false(labels);
    for r in 0..mask.n {
        for c in 0..mask.n {
            mask.set(r, c, mask.labels[c].block <= mask.labels[r].block);
        }
    }
    Ok(mask)
}

/// Decoder base pattern over `N` quantized latents followed by `L` image
/// queries, before any tail-drop reduction.
pub fn decoder_base_mask(l: usize, k: usize, m: usize) -> Result<AttentionMask> {
    if l == 0 || k == 0 || l % k != 0 {
        return Err(Error::DimensionMismatch(format!(
            "L = {l} must be positive and divisible by K = {k}"
        )));
    }
    let mut labels = latent_labels(k, m, TokenKind::QuantLatent);
    labels.extend(image_labels(l, k));
    let mut mask = AttentionMask::all_false(labels);
    for r in 0..mask.n {
        for c in 0..mask.n {
            let (lr, lc) = (mask.labels[r], mask.labels[c]);
            let v = match (lr.kind, lc.kind) {
                // Latent queries see only latents of the same or earlier blocks.
                (TokenKind::QuantLatent, TokenKind::QuantLatent) => lc.block <= lr.block,
                (TokenKind::QuantLatent, TokenKind::Image) => false,
                // Image queries see their own block's image queries plus
                // latents of the same or earlier blocks.
                (TokenKind::Image, TokenKind::Image) => lc.block == lr.block,
                (TokenKind::Image, TokenKind::QuantLatent) => lc.block <= lr.block,
                _ => unreachable!("decoder base has no other kinds"),
            };
            mask.set(r, c, v);
        }
    }
    Ok(mask)
}

/// Apply a tail-drop mask to the decoder base pattern: rows and columns of
/// dropped latent positions are removed, leaving `N' + L` positions.
pub fn decoder_mask(base: &AttentionMask, m: &LatentMask) -> Result<AttentionMask> {
    let n_latent = m.bits.len();
    if base.n < n_latent
        || base.labels[..n_latent].iter().any(|l| l.kind != TokenKind::QuantLatent)
        || base.labels[n_latent..].iter().any(|l| l.kind != TokenKind::Image)
    {
        return Err(Error::ShapeMismatch(format!(
            "base mask ({} positions) does not start with {n_latent} quantized latents",
            base.n
        )));
    }
    let keep: Vec<usize> = (0..n_latent)
        .filter(|&j| m.bits[j])
        .chain(n_latent..base.n)
        .collect();
    base.reduce(&keep)
}

/// Scorer mask over continuous latents followed by quantized latents, with
/// blocks before `q` reduced to their sampled lengths, block `q` kept at
/// full length `M`, and later blocks fully dropped.
pub fn scorer_mask(
    k: usize,
    m: usize,
    lengths_before_q: &[usize],
    q: usize,
) -> Result<AttentionMask> {
    if q >= k {
        return Err(Error::IndexOutOfRange { what: "block", index: q, limit: k });
    }
    if lengths_before_q.len() != q {
        return Err(Error::ShapeMismatch(format!(
            "expected {q} preceding lengths, got {}",
            lengths_before_q.len()
        )));
    }
    let mut lengths = Vec::with_capacity(k);
    lengths.extend_from_slice(lengths_before_q);
    lengths.push(m);
    lengths.resize(k, 0);
    let drop = latent_mask(&lengths, m)?;

    // Base pattern: block-causal over both halves.
    let mut labels = latent_labels(k, m, TokenKind::Latent);
    labels.extend(latent_labels(k, m, TokenKind::QuantLatent));
    let mut base = AttentionMask::all_false(labels);
    for r in 0..base.n {
        for c in 0..base.n {
            base.set(r, c, base.labels[c].block <= base.labels[r].block);
        }
    }
    let n = k * m;
    let keep: Vec<usize> = (0..n)
        .filter(|&j| drop.bits[j])
        .chain((0..n).filter(|&j| drop.bits[j]).map(|j| j + n))
        .collect();
    base.reduce(&keep)
}

/// Reference masked attention: row-wise softmax of `Q K^T / sqrt(d)` with
/// disallowed entries at negative infinity, applied to `V`.
pub fn masked_attention_forward(
    q: &Mat,
    k: &Mat,
    v: &Mat,
    mask: &AttentionMask,
) -> Result<Mat> {
    if q.rows != mask.n || k.rows != mask.n || v.rows != mask.n {
        return Err(Error::ShapeMismatch(format!(
            "Q/K/V rows ({}, {}, {}) must equal mask size {}",
            q.rows, k.rows, v.rows, mask.n
        )));
    }
    if q.cols != k.cols {
        return Err(Error::ShapeMismatch(format!(
            "Q width {} vs K width {}",
            q.cols, k.cols
        )));
    }
    let scale = 1.0 / (q.cols as f64).sqrt();
    let mut out = Mat::zeros(mask.n, v.cols);
    let mut logits = vec![0.0f64; mask.n];
    for r in 0..mask.n {
        let mut any = false;
        let mut max = f64::NEG_INFINITY;
        for c in 0..mask.n {
            let val = if mask.allowed(r, c) {
                any = true;
                let dot: f64 = q.row(r).iter().zip(k.row(c)).map(|(a, b)| a * b).sum();
                dot * scale
            } else {
                f64::NEG_INFINITY
            };
            logits[c] = val;
            if val > max {
                max = val;
            }
        }
        if !any {
            return Err(Error::EmptyAttentionRow(r));
        }
        // exp(-inf - max) is exactly 0, so masked entries contribute nothing.
        let mut denom = 0.0;
        for l in logits.iter_mut() {
            *l = (*l - max).exp();
            denom += *l;
        }
        let out_row = out.row_mut(r);
        for c in 0..mask.n {
            let wgt = logits[c] / denom;
            if wgt != 0.0 {
                for (o, &vv) in out_row.iter_mut().zip(v.row(c)) {
                    *o += wgt * vv;
                }
            }
        }
    }
    Ok(out)
}

/// Which visibility rule a run-length mask follows.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MaskRule {
    Encoder,
    Decoder,
    Scorer,
}

/// Run-length mask representation: positions are described as
/// `(label, run length)` runs and entries are computed on demand. This is
/// the production-scale path; [`MaskRuns::to_dense`] materializes it.
#[derive(Debug, Clone)]
pub struct MaskRuns {
    pub rule: MaskRule,
    pub runs: Vec<(PosLabel, usize)>,
}

impl MaskRuns {
    pub fn encoder(l: usize, k: usize, m: usize) -> Result<Self> {
        if l == 0 || k == 0 || l % k != 0 {
            return Err(Error::DimensionMismatch(format!(
                "L = {l} must be positive and divisible by K = {k}"
            )));
        }
        let per_block = l / k;
        let mut runs = Vec::new();
        for b in 0..k {
            runs.push((PosLabel { kind: TokenKind::Image, block: b }, per_block));
        }
        for b in 0..k {
            runs.push((PosLabel { kind: TokenKind::Latent, block: b }, m));
        }
        Ok(MaskRuns { rule: MaskRule::Encoder, runs })
    }

    /// Decoder pattern with per-block retained lengths already applied.
    pub fn decoder(l: usize, k: usize, m: usize, lengths: &[usize]) -> Result<Self> {
        if l == 0 || k == 0 || l % k != 0 {
            return Err(Error::DimensionMismatch(format!(
                "L = {l} must be positive and divisible by K = {k}"
            )));
        }
        if lengths.len() != k {
            return Err(Error::ShapeMismatch(format!(
                "expected {k} lengths, got {}",
                lengths.len()
            )));
        }
        let per_block = l / k;
        let mut runs = Vec::new();
        for (b, &len) in lengths.iter().enumerate() {
            if len > m {
                return Err(Error::LengthOutOfRange { block: b, length: len, max: m });
            }
            runs.push((PosLabel { kind: TokenKind::QuantLatent, block: b }, len));
        }
        for b in 0..k {
            runs.push((PosLabel { kind: TokenKind::Image, block: b }, per_block));
        }
        Ok(MaskRuns { rule: MaskRule::Decoder, runs })
    }

    /// Scorer pattern with the drop already applied: blocks before `q` at
    /// their lengths, block `q` at full `M`, later blocks dropped.
    pub fn scorer(k: usize, m: usize, lengths_before_q: &[usize], q: usize) -> Result<Self> {
        if q >= k {
            return Err(Error::IndexOutOfRange { what: "block", index: q, limit: k });
        }
        if lengths_before_q.len() != q {
            return Err(Error::ShapeMismatch(format!(
                "expected {q} preceding lengths, got {}",
                lengths_before_q.len()
            )));
        }
        let mut lengths = Vec::with_capacity(k);
        lengths.extend_from_slice(lengths_before_q);
        lengths.push(m);
        lengths.resize(k, 0);
        let mut runs = Vec::new();
        for (b, &len) in lengths.iter().enumerate() {
            if len > m {
                return Err(Error::LengthOutOfRange { block: b, length: len, max: m });
            }
            runs.push((PosLabel { kind: TokenKind::Latent, block: b }, len));
        }
        for (b, &len) in lengths.iter().enumerate() {
            runs.push((PosLabel { kind: TokenKind::QuantLatent, block: b }, len));
        }
        Ok(MaskRuns { rule: MaskRule::Scorer, runs })
    }

    pub fn len(&self) -> usize {
        self.runs.iter().map(|&(_, n)| n).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn label_at(&self, mut pos: usize) -> PosLabel {
        for &(label, n) in &self.runs {
            if pos < n {
                return label;
            }
            pos -= n;
        }
        panic!("position out of range");
    }

    /// Entry predicate, evaluated from run labels without materializing.
    pub fn allows(&self, r: usize, c: usize) -> bool {
        let (lr, lc) = (self.label_at(r), self.label_at(c));
        match self.rule {
            MaskRule::Encoder | MaskRule::Scorer => lc.block <= lr.block,
            MaskRule::Decoder => match (lr.kind, lc.kind) {
                (TokenKind::QuantLatent, TokenKind::QuantLatent) => lc.block <= lr.block,
                (TokenKind::QuantLatent, TokenKind::Image) => false,
                (TokenKind::Image, TokenKind::Image) => lc.block == lr.block,
                (TokenKind::Image, TokenKind::QuantLatent) => lc.block <= lr.block,
                _ => false,
            },
        }
    }

    pub fn to_dense(&self) -> AttentionMask {
        let labels: Vec<PosLabel> = self
            .runs
            .iter()
            .flat_map(|&(label, n)| std::iter::repeat_n(label, n))
            .collect();
        let mut mask = AttentionMask::all_false(labels);
        for r in 0..mask.n {
            for c in 0..mask.n {
                mask.set(r, c, self.allows(r, c));
            }
        }
        mask
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn latent_mask_full_retention() {
        let m = latent_mask(&[4, 4], 4).unwrap();
        assert!(m.bits.iter().all(|&b| b));
        assert_eq!(m.bits.len(), 8);
    }

    #[test]
    fn latent_mask_prefix_structure() {
        let m = latent_mask(&[2, 1], 4).unwrap();
        let expect = [true, true, false, false, true, false, false, false];
        assert_eq!(m.bits, expect);

        let m = latent_mask(&[0, 2, 1], 2).unwrap();
        let expect = [false, false, true, true, true, false];
        assert_eq!(m.bits, expect);
    }

    #[test]
    fn latent_mask_rejects_overlong() {
        assert!(latent_mask(&[5], 4).is_err());
    }

    #[test]
    fn sampler_respects_bounds() {
        let params = SamplerParams::new(256.0, 128.0, 32, 512).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let lens = sample_lengths(&mut rng, 4, &params);
        assert_eq!(lens.len(), 4);
        assert!(lens.iter().all(|&l| (32..=512).contains(&l)));
    }

    #[test]
    fn sampler_degenerates_to_mean() {
        let params = SamplerParams::new(100.0, 1e-6, 32, 512).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let lens = sample_lengths(&mut rng, 16, &params);
        assert!(lens.iter().all(|&l| l == 100));
    }

    #[test]
    fn sampler_single_point_window_returns_it() {
        let params = SamplerParams::new(4.0, 8.0, 7, 7).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        assert_eq!(sample_lengths(&mut rng, 3, &params), vec![7, 7, 7]);
    }

    #[test]
    fn encoder_mask_single_block_is_full() {
        let mask = encoder_mask(4, 1, 2).unwrap();
        for r in 0..mask.n {
            for c in 0..mask.n {
                assert!(mask.allowed(r, c));
            }
        }
    }

    #[test]
    fn encoder_mask_two_block_enumeration() {
        // Positions: img0(b0), img1(b1), lat0(b0), lat1(b1).
        let mask = encoder_mask(2, 2, 1).unwrap();
        let expect = [
            [true, false, true, false],
            [true, true, true, true],
            [true, false, true, false],
            [true, true, true, true],
        ];
        for r in 0..4 {
            for c in 0..4 {
                assert_eq!(mask.allowed(r, c), expect[r][c], "({r},{c})");
            }
        }
    }

    #[test]
    fn decoder_mask_no_drop_equals_base() {
        let base = decoder_base_mask(4, 2, 2).unwrap();
        let m = latent_mask(&[2, 2], 2).unwrap();
        let reduced = decoder_mask(&base, &m).unwrap();
        assert_eq!(reduced, base);
    }

    #[test]
    fn decoder_mask_single_block_enumeration() {
        // K=1, M=2, L=1, lengths=(1): surviving positions (lat0, img0).
        // Latent queries attend only to latents; image queries attend to
        // their block's image positions and retained latents.
        let base = decoder_base_mask(1, 1, 2).unwrap();
        let m = latent_mask(&[1], 2).unwrap();
        let reduced = decoder_mask(&base, &m).unwrap();
        assert_eq!(reduced.n, 2);
        assert!(reduced.allowed(0, 0));
        assert!(!reduced.allowed(0, 1));
        assert!(reduced.allowed(1, 0));
        assert!(reduced.allowed(1, 1));
    }

    #[test]
    fn decoder_reduction_commutes_with_predicate_route() {
        // Deleting rows/cols of the dense base must agree with building the
        // reduced mask directly from run labels.
        let (l, k, m) = (8, 4, 3);
        let lengths = [3, 0, 2, 1];
        let base = decoder_base_mask(l, k, m).unwrap();
        let drop = latent_mask(&lengths, m).unwrap();
        let reduced = decoder_mask(&base, &drop).unwrap();
        let direct = MaskRuns::decoder(l, k, m, &lengths).unwrap().to_dense();
        assert_eq!(reduced, direct);
    }

    #[test]
    fn scorer_mask_single_block_full() {
        let mask = scorer_mask(1, 3, &[], 0).unwrap();
        assert_eq!(mask.n, 6);
        for r in 0..6 {
            for c in 0..6 {
                assert!(mask.allowed(r, c));
            }
        }
    }

    #[test]
    fn scorer_mask_enumeration() {
        // q=1, K=2, M=2, lengths_before=(1): survivors are one continuous +
        // one quantized token of block 0 and two of each for block 1 -> 6.
        let mask = scorer_mask(2, 2, &[1], 1).unwrap();
        assert_eq!(mask.n, 6);
        // Position blocks: c(b0), c(b1), c(b1), q(b0), q(b1), q(b1).
        let blocks = [0, 1, 1, 0, 1, 1];
        for (i, &b) in blocks.iter().enumerate() {
            assert_eq!(mask.labels[i].block, b);
        }
        for r in 0..6 {
            for c in 0..6 {
                assert_eq!(mask.allowed(r, c), blocks[c] <= blocks[r], "({r},{c})");
            }
        }
    }

    #[test]
    fn scorer_mask_drops_future_blocks_entirely() {
        let mask = scorer_mask(3, 2, &[1], 1).unwrap();
        // Blocks after q then carry zero positions.
        assert!(mask.labels.iter().all(|l| l.block <= 1));
        assert!(mask.is_block_causal());
    }

    #[test]
    fn scorer_mask_rejects_bad_q() {
        assert!(scorer_mask(2, 2, &[1, 1], 2).is_err());
        assert!(scorer_mask(2, 2, &[], 1).is_err());
    }

    #[test]
    fn structural_causality_over_random_shapes() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..25 {
            let k = 1 + rng.random_range(0..4usize);
            let m = 1 + rng.random_range(0..4usize);
            let l = k * (1 + rng.random_range(0..4usize));
            assert!(encoder_mask(l, k, m).unwrap().is_block_causal());
            let base = decoder_base_mask(l, k, m).unwrap();
            assert!(base.is_block_causal());
            let lengths: Vec<usize> = (0..k).map(|_| rng.random_range(0..=m)).collect();
            let drop = latent_mask(&lengths, m).unwrap();
            assert!(decoder_mask(&base, &drop).unwrap().is_block_causal());
            let q = rng.random_range(0..k);
            let before: Vec<usize> = (0..q).map(|_| rng.random_range(0..=m)).collect();
            assert!(scorer_mask(k, m, &before, q).unwrap().is_block_causal());
        }
    }

    #[test]
    fn runs_agree_with_dense_construction() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        for _ in 0..20 {
            let k = 1 + rng.random_range(0..3usize);
            let m = 1 + rng.random_range(0..3usize);
            let l = k * (1 + rng.random_range(0..3usize));
            assert_eq!(MaskRuns::encoder(l, k, m).unwrap().to_dense(), encoder_mask(l, k, m).unwrap());
            let q = rng.random_range(0..k);
            let before: Vec<usize> = (0..q).map(|_| rng.random_range(0..=m)).collect();
            assert_eq!(
                MaskRuns::scorer(k, m, &before, q).unwrap().to_dense(),
                scorer_mask(k, m, &before, q).unwrap()
            );
        }
    }

    #[test]
    fn attention_identity_mask_selects_value_rows() {
        let n = 3;
        let labels: Vec<PosLabel> =
            (0..n).map(|i| PosLabel { kind: TokenKind::Image, block: i }).collect();
        let mut mask = AttentionMask::all_false(labels);
        for i in 0..n {
            mask.set(i, i, true);
        }
        let q = Mat::from_vec(n, 2, vec![0.3; 6]).unwrap();
        let k = Mat::from_vec(n, 2, vec![0.7; 6]).unwrap();
        let v = Mat::from_vec(n, 2, (0..6).map(|i| i as f64).collect()).unwrap();
        let out = masked_attention_forward(&q, &k, &v, &mask).unwrap();
        assert_eq!(out.data, v.data);
    }

    #[test]
    fn attention_all_ones_single_position() {
        let labels = vec![PosLabel { kind: TokenKind::Image, block: 0 }];
        let mut mask = AttentionMask::all_false(labels);
        mask.set(0, 0, true);
        let q = Mat::from_vec(1, 1, vec![0.5]).unwrap();
        let k = Mat::from_vec(1, 1, vec![0.5]).unwrap();
        let v = Mat::from_vec(1, 1, vec![0.125]).unwrap();
        let out = masked_attention_forward(&q, &k, &v, &mask).unwrap();
        assert_eq!(out.data, vec![0.125]);
    }

    #[test]
    fn attention_empty_row_is_an_error() {
        let labels = vec![PosLabel { kind: TokenKind::Image, block: 0 }; 2];
        let mut mask = AttentionMask::all_false(labels);
        mask.set(0, 0, true); // row 1 attends to nothing
        let q = Mat::zeros(2, 1);
        let k = Mat::zeros(2, 1);
        let v = Mat::zeros(2, 1);
        assert!(matches!(
            masked_attention_forward(&q, &k, &v, &mask),
            Err(Error::EmptyAttentionRow(1))
        ));
    }

    #[test]
    fn attention_is_causal_under_suffix_perturbation() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let (l, k, m) = (4, 2, 2);
        let mask = encoder_mask(l, k, m).unwrap();
        let n = mask.n;
        let rand_mat = |rng: &mut ChaCha8Rng, rows: usize, cols: usize| {
            Mat::from_vec(rows, cols, (0..rows * cols).map(|_| rng.random::<f64>()).collect())
                .unwrap()
        };
        let q = rand_mat(&mut rng, n, 3);
        let kmat = rand_mat(&mut rng, n, 3);
        let v = rand_mat(&mut rng, n, 2);
        let out1 = masked_attention_forward(&q, &kmat, &v, &mask).unwrap();

        // Perturb keys/values of block-1 positions arbitrarily.
        let mut k2 = kmat.clone();
        let mut v2 = v.clone();
        for pos in 0..n {
            if mask.labels[pos].block > 0 {
                for val in k2.row_mut(pos) {
                    *val += rng.random::<f64>() * 100.0;
                }
                for val in v2.row_mut(pos) {
                    *val -= rng.random::<f64>() * 50.0;
                }
            }
        }
        let out2 = masked_attention_forward(&q, &k2, &v2, &mask).unwrap();
        for pos in 0..n {
            if mask.labels[pos].block == 0 {
                for c in 0..out1.cols {
                    assert!(
                        (out1.at(pos, c) - out2.at(pos, c)).abs() <= 1e-12,
                        "block-0 row {pos} moved"
                    );
                }
            }
        }
    }

    #[test]
    fn pbm_export_shape() {
        let mask = encoder_mask(2, 2, 1).unwrap();
        let pbm = mask.to_pbm();
        let mut lines = pbm.lines();
        assert_eq!(lines.next(), Some("P1"));
        assert_eq!(lines.next(), Some("4 4"));
        assert_eq!(lines.next(), Some("1 0 1 0"));
    }

    proptest! {
        #[test]
        fn prefix_property_no_one_after_zero(
            lengths in proptest::collection::vec(0usize..=6, 1..5)
        ) {
            let m = 6;
            let mask = latent_mask(&lengths, m).unwrap();
            for (b, chunk) in mask.bits.chunks(m).enumerate() {
                let mut seen_zero = false;
                for &bit in chunk {
                    if seen_zero {
                        prop_assert!(!bit, "bit set after zero in block {b}");
                    }
                    if !bit {
                        seen_zero = true;
                    }
                }
            }
        }

        #[test]
        fn nesting_smaller_lengths_are_subsets(
            pairs in proptest::collection::vec((0usize..=5, 0usize..=5), 1..5)
        ) {
            let m = 5;
            let small: Vec<usize> = pairs.iter().map(|&(a, b)| a.min(b)).collect();
            let big: Vec<usize> = pairs.iter().map(|&(a, b)| a.max(b)).collect();
            let ms = latent_mask(&small, m).unwrap();
            let mb = latent_mask(&big, m).unwrap();
            for (s, b) in ms.bits.iter().zip(&mb.bits) {
                prop_assert!(!s | b, "small mask sets a bit the big mask lacks");
            }
        }
    }
}
