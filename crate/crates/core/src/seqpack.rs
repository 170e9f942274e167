//! Packing variable-length per-block token ids into the autoregressive
//! sequence format, and evaluating sequence likelihood under a supplied
//! probability model.
//!
//! Vocabulary layout: ids `[0, c)` are codebook entries, id `c` is the
//! end-of-block marker, and ids above `c` are reserved for condition
//! tokens (class labels or context). A packed sequence is the optional
//! condition prefix followed by each block's ids, each block terminated by
//! the marker — exactly `K` markers per video.
//!
//! The bundled bigram model (add-one smoothing) exists so the likelihood
//! path can be exercised without any trained model.

use std::io::{BufRead, Write};

use crate::error::{Error, Result};
use crate::util::compensated_sum;

/// Token ids with end-of-block markers and an optional condition prefix.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PackedSequence {
    /// Condition prefix followed by marker-terminated blocks.
    pub ids: Vec<u32>,
    /// Total vocabulary size (codes + marker + condition ids).
    pub vocab: u32,
    pub eob_id: u32,
    /// Number of leading condition tokens.
    pub condition_len: usize,
}

impl PackedSequence {
    /// Ids after the condition prefix.
    pub fn body(&self) -> &[u32] {
        &self.ids[self.condition_len..]
    }

    pub fn condition(&self) -> &[u32] {
        &self.ids[..self.condition_len]
    }

    fn marker_count(&self) -> usize {
        self.body().iter().filter(|&&id| id == self.eob_id).count()
    }
}

/// Concatenate condition, then each block's ids followed by the marker.
///
/// `max_block_len` is the per-block capacity `M`; code ids must be below
/// `eob_id` and condition ids above it (within `vocab`).
pub fn pack(
    blocks: &[Vec<u32>],
    eob_id: u32,
    condition: &[u32],
    max_block_len: usize,
    vocab: u32,
) -> Result<PackedSequence> {
    if eob_id >= vocab {
        return Err(Error::IdOutOfVocab { id: eob_id, limit: vocab });
    }
    let mut ids = Vec::with_capacity(
        condition.len() + blocks.iter().map(|b| b.len() + 1).sum::<usize>(),
    );
    for &cid in condition {
        if cid <= eob_id || cid >= vocab {
            return Err(Error::IdOutOfVocab { id: cid, limit: vocab });
        }
        ids.push(cid);
    }
    for (bi, block) in blocks.iter().enumerate() {
        if block.len() > max_block_len {
            return Err(Error::LengthOverflow {
                block: bi,
                length: block.len(),
                max: max_block_len,
            });
        }
        for &id in block {
            if id >= eob_id {
                return Err(Error::IdOutOfVocab { id, limit: eob_id });
            }
            ids.push(id);
        }
        ids.push(eob_id);
    }
    Ok(PackedSequence { ids, vocab, eob_id, condition_len: condition.len() })
}

/// Split a packed sequence back into its `k` block id vectors.
pub fn unpack(seq: &PackedSequence, k: usize) -> Result<Vec<Vec<u32>>> {
    let found = seq.marker_count();
    if found != k {
        return Err(Error::MarkerCount { expected: k, found });
    }
    let mut blocks = Vec::with_capacity(k);
    let mut current = Vec::new();
    for &id in seq.body() {
        if id == seq.eob_id {
            blocks.push(std::mem::take(&mut current));
        } else {
            current.push(id);
        }
    }
    if !current.is_empty() {
        return Err(Error::Format("trailing ids after the final block marker".into()));
    }
    Ok(blocks)
}

/// A next-token distribution conditioned on the full prefix (condition
/// tokens included).
pub trait SequenceModel {
    fn vocab(&self) -> u32;
    /// Distribution over the vocabulary given the prefix. Must sum to 1
    /// within 1e-9 with non-negative entries.
    fn distribution(&self, prefix: &[u32]) -> Vec<f64>;
}

/// Per-token negative log-likelihood of the sequence body under the model;
/// condition tokens condition the model but are excluded from the sum.
pub fn nll(seq: &PackedSequence, model: &dyn SequenceModel) -> Result<f64> {
    if model.vocab() != seq.vocab {
        return Err(Error::ShapeMismatch(format!(
            "model vocab {} vs sequence vocab {}",
            model.vocab(),
            seq.vocab
        )));
    }
    let body_len = seq.ids.len() - seq.condition_len;
    if body_len == 0 {
        return Err(Error::InvalidParam("sequence body is empty".into()));
    }
    let mut terms = Vec::with_capacity(body_len);
    for i in seq.condition_len..seq.ids.len() {
        let dist = model.distribution(&seq.ids[..i]);
        validate_distribution(&dist, seq.vocab)?;
        let p = dist[seq.ids[i] as usize];
        if p <= 0.0 {
            return Err(Error::InvalidDistribution(format!(
                "model assigns zero probability to observed token {}",
                seq.ids[i]
            )));
        }
        terms.push(-p.ln());
    }
    Ok(compensated_sum(terms.iter().copied()) / body_len as f64)
}

fn validate_distribution(dist: &[f64], vocab: u32) -> Result<()> {
    if dist.len() != vocab as usize {
        return Err(Error::InvalidDistribution(format!(
            "distribution over {} ids, vocab is {vocab}",
            dist.len()
        )));
    }
    if dist.iter().any(|&p| p.is_nan() || p < 0.0 || !p.is_finite()) {
        return Err(Error::InvalidDistribution("negative or non-finite entry".into()));
    }
    let sum: f64 = dist.iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidDistribution(format!("sums to {sum}")));
    }
    Ok(())
}

/// Uniform distribution over the vocabulary.
pub struct UniformModel {
    pub vocab: u32,
}

impl SequenceModel for UniformModel {
    fn vocab(&self) -> u32 {
        self.vocab
    }

    fn distribution(&self, _prefix: &[u32]) -> Vec<f64> {
        vec![1.0 / self.vocab as f64; self.vocab as usize]
    }
}

/// Oracle that assigns probability one to the next token of a reference
/// sequence.
pub struct OracleModel {
    reference: Vec<u32>,
    vocab: u32,
}

impl OracleModel {
    pub fn new(reference: &PackedSequence) -> Self {
        OracleModel { reference: reference.ids.clone(), vocab: reference.vocab }
    }
}

impl SequenceModel for OracleModel {
    fn vocab(&self) -> u32 {
        self.vocab
    }

    fn distribution(&self, prefix: &[u32]) -> Vec<f64> {
        let mut dist = vec![0.0; self.vocab as usize];
        // Past the reference's end (or off-reference), fall back to the
        // first vocabulary id; nll validation will flag the mismatch.
        let next = self.reference.get(prefix.len()).copied().unwrap_or(0);
        dist[next as usize] = 1.0;
        dist
    }
}

/// Count-based bigram model with add-one smoothing; the previous token (or
/// a start state) is the only context.
pub struct BigramModel {
    vocab: u32,
    /// (vocab + 1) rows: one per previous token plus the start state.
    counts: Vec<u64>,
    totals: Vec<u64>,
}

impl BigramModel {
    pub fn fit(sequences: &[&PackedSequence], vocab: u32) -> Self {
        let v = vocab as usize;
        let mut counts = vec![0u64; (v + 1) * v];
        let mut totals = vec![0u64; v + 1];
        for seq in sequences {
            let mut prev = v; // start state
            for &id in &seq.ids {
                counts[prev * v + id as usize] += 1;
                totals[prev] += 1;
                prev = id as usize;
            }
        }
        BigramModel { vocab, counts, totals }
    }
}

impl SequenceModel for BigramModel {
    fn vocab(&self) -> u32 {
        self.vocab
    }

    fn distribution(&self, prefix: &[u32]) -> Vec<f64> {
        let v = self.vocab as usize;
        let prev = prefix.last().map_or(v, |&id| id as usize);
        let total = self.totals[prev] as f64;
        (0..v)
            .map(|id| (self.counts[prev * v + id] as f64 + 1.0) / (total + v as f64))
            .collect()
    }
}

/// Write packed sequences as newline-delimited decimal id lists; condition
/// ids carry a `#` prefix.
pub fn write_packed<W: Write>(out: &mut W, sequences: &[PackedSequence]) -> Result<()> {
    for seq in sequences {
        let mut fields = Vec::with_capacity(seq.ids.len());
        for (i, &id) in seq.ids.iter().enumerate() {
            if i < seq.condition_len {
                fields.push(format!("#{id}"));
            } else {
                fields.push(id.to_string());
            }
        }
        writeln!(out, "{}", fields.join(" "))?;
    }
    Ok(())
}

/// Parse the newline-delimited format back; one sequence per line.
pub fn read_packed<R: BufRead>(input: R, eob_id: u32, vocab: u32) -> Result<Vec<PackedSequence>> {
    let mut out = Vec::new();
    for (lineno, line) in input.lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let mut ids = Vec::new();
        let mut condition_len = 0usize;
        let mut in_condition = true;
        for field in line.split_whitespace() {
            let (is_cond, text) = match field.strip_prefix('#') {
                Some(rest) => (true, rest),
                None => (false, field),
            };
            if is_cond && !in_condition {
                return Err(Error::Format(format!(
                    "line {}: condition id after body tokens",
                    lineno + 1
                )));
            }
            in_condition = is_cond;
            let id: u32 = text.parse().map_err(|e| {
                Error::Format(format!("line {}: {e}", lineno + 1))
            })?;
            if id >= vocab {
                return Err(Error::IdOutOfVocab { id, limit: vocab });
            }
            if is_cond {
                condition_len += 1;
            }
            ids.push(id);
        }
        out.push(PackedSequence { ids, vocab, eob_id, condition_len });
    }
    Ok(out)
}
