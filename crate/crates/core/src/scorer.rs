//! Ground-truth quality scores per candidate token length, and the score
//! prediction backends standing in for a learned scorer.
//!
//! The protocol for one sample and target block `q`: code blocks before
//! `q` closed-loop at their given lengths, zero every later block, then for
//! each candidate length reconstruct block `q` and evaluate the chosen
//! metric against the original over that block's frame span. Scores are
//! oriented lower-is-better.
//!
//! Two backends implement the prediction contract: `Exact` returns the
//! ground truth itself (used to validate allocation optimality), and
//! `Noisy` perturbs it with zero-mean Gaussian noise scaled by each row's
//! score range (used to measure allocation robustness to scorer error).

use std::io::{BufRead, Write};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::codec::{prefix_prediction, BlockCodec};
use crate::error::{Error, Result};
use crate::metrics::MetricKind;
use crate::patchify::PatchConfig;
use crate::util::{compensated_sum, subseed};
use crate::video::VideoClip;

/// One ground-truth scoring request: target block, lengths of preceding
/// blocks, candidate grid, and metric. Blocks after `q` are implicitly at
/// length zero.
#[derive(Debug, Clone)]
pub struct ScorerProbe {
    pub q: usize,
    pub lengths_before: Vec<usize>,
    pub candidate_grid: Vec<usize>,
    pub metric: MetricKind,
}

impl ScorerProbe {
    pub fn validate(&self, cfg: &PatchConfig) -> Result<()> {
        if self.q >= cfg.k {
            return Err(Error::IndexOutOfRange { what: "block", index: self.q, limit: cfg.k });
        }
        if self.lengths_before.len() != self.q {
            return Err(Error::ShapeMismatch(format!(
                "expected {} preceding lengths, got {}",
                self.q,
                self.lengths_before.len()
            )));
        }
        for (block, &len) in self.lengths_before.iter().enumerate() {
            if len > cfg.m {
                return Err(Error::LengthOutOfRange { block, length: len, max: cfg.m });
            }
        }
        if self.candidate_grid.is_empty() {
            return Err(Error::InvalidParam("empty candidate grid".into()));
        }
        for pair in self.candidate_grid.windows(2) {
            if pair[1] <= pair[0] {
                return Err(Error::InvalidParam(
                    "candidate grid must be strictly increasing".into(),
                ));
            }
        }
        if *self.candidate_grid.last().unwrap() > cfg.m {
            return Err(Error::LengthOutOfRange {
                block: self.q,
                length: *self.candidate_grid.last().unwrap(),
                max: cfg.m,
            });
        }
        Ok(())
    }
}

/// Where a score table's entries came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScoreSource {
    Exact,
    Noisy,
    File,
}

impl ScoreSource {
    pub fn name(&self) -> &'static str {
        match self {
            ScoreSource::Exact => "exact",
            ScoreSource::Noisy => "noisy",
            ScoreSource::File => "file",
        }
    }
}

/// Scores indexed by (sample, block, candidate), lower is better.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreTable {
    pub samples: usize,
    pub blocks: usize,
    pub grid: Vec<usize>,
    pub metric: MetricKind,
    pub source: ScoreSource,
    scores: Vec<f64>,
}

impl ScoreTable {
    pub fn new(
        samples: usize,
        blocks: usize,
        grid: Vec<usize>,
        metric: MetricKind,
        source: ScoreSource,
    ) -> Self {
        let n = samples * blocks * grid.len();
        ScoreTable { samples, blocks, grid, metric, source, scores: vec![0.0; n] }
    }

    #[inline]
    pub fn at(&self, sample: usize, block: usize, candidate: usize) -> f64 {
        self.scores[(sample * self.blocks + block) * self.grid.len() + candidate]
    }

    #[inline]
    pub fn set(&mut self, sample: usize, block: usize, candidate: usize, v: f64) {
        self.scores[(sample * self.blocks + block) * self.grid.len() + candidate] = v;
    }

    pub fn set_row(&mut self, sample: usize, block: usize, row: &[f64]) {
        let g = self.grid.len();
        let base = (sample * self.blocks + block) * g;
        self.scores[base..base + g].copy_from_slice(row);
    }

    pub fn row(&self, sample: usize, block: usize) -> &[f64] {
        let g = self.grid.len();
        let base = (sample * self.blocks + block) * g;
        &self.scores[base..base + g]
    }

    /// All sample rows for one block, as an owned matrix.
    pub fn block_rows(&self, block: usize) -> Vec<Vec<f64>> {
        (0..self.samples).map(|s| self.row(s, block).to_vec()).collect()
    }

    /// `sample,block,candidate,score` CSV.
    pub fn write_csv<W: Write>(&self, out: &mut W) -> Result<()> {
        writeln!(out, "sample,block,candidate,score")?;
        for s in 0..self.samples {
            for b in 0..self.blocks {
                for (ci, &cand) in self.grid.iter().enumerate() {
                    writeln!(out, "{s},{b},{cand},{}", self.at(s, b, ci))?;
                }
            }
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(input: R, metric: MetricKind) -> Result<Self> {
        let mut entries: Vec<(usize, usize, usize, f64)> = Vec::new();
        for (lineno, line) in input.lines().enumerate() {
            let line = line?;
            let line = line.trim();
            if line.is_empty() || (lineno == 0 && line.starts_with("sample")) {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 4 {
                return Err(Error::Format(format!(
                    "score CSV line {}: expected 4 fields",
                    lineno + 1
                )));
            }
            let parse_us = |s: &str| {
                s.trim().parse::<usize>().map_err(|e| {
                    Error::Format(format!("score CSV line {}: {e}", lineno + 1))
                })
            };
            let score: f64 = fields[3].trim().parse().map_err(|e| {
                Error::Format(format!("score CSV line {}: {e}", lineno + 1))
            })?;
            if !score.is_finite() {
                return Err(Error::Format(format!(
                    "score CSV line {}: non-finite score",
                    lineno + 1
                )));
            }
            entries.push((parse_us(fields[0])?, parse_us(fields[1])?, parse_us(fields[2])?, score));
        }
        if entries.is_empty() {
            return Err(Error::Format("score CSV holds no rows".into()));
        }
        let samples = entries.iter().map(|e| e.0).max().unwrap() + 1;
        let blocks = entries.iter().map(|e| e.1).max().unwrap() + 1;
        let mut grid: Vec<usize> = entries.iter().map(|e| e.2).collect();
        grid.sort_unstable();
        grid.dedup();
        let expected = samples * blocks * grid.len();
        if entries.len() != expected {
            return Err(Error::Format(format!(
                "score CSV is not rectangular: {} rows, expected {expected}",
                entries.len()
            )));
        }
        let mut table = ScoreTable::new(samples, blocks, grid.clone(), metric, ScoreSource::File);
        for (s, b, cand, score) in entries {
            let ci = grid.binary_search(&cand).map_err(|_| {
                Error::Format(format!("candidate {cand} missing from inferred grid"))
            })?;
            table.set(s, b, ci, score);
        }
        Ok(table)
    }
}

/// Ground-truth scores for one clip: one lower-is-better value per
/// candidate length in the probe's grid.
pub fn ground_truth_scores(
    clip: &VideoClip,
    probe: &ScorerProbe,
    cfg: &PatchConfig,
) -> Result<Vec<f64>> {
    probe.validate(cfg)?;
    let codec = BlockCodec::for_config(cfg, clip.dims())?;
    let pred = prefix_prediction(clip, &probe.lengths_before, cfg, probe.q)?;
    let (t0, t1) = cfg.block_frame_span(probe.q, clip.t);
    let orig_block = clip.frame_range(t0, t1)?;
    let n_blk = codec.elems();
    let per_frame = clip.h * clip.w * clip.c;

    let mut resid = orig_block.data.clone();
    for (j, v) in resid.iter_mut().enumerate() {
        *v -= pred[j % per_frame];
    }
    let coeffs = codec.forward(&resid);

    // Reconstruct incrementally: each candidate extends the previous one by
    // the newly retained coefficients.
    let mut recon = vec![0.0f64; n_blk];
    for (j, v) in recon.iter_mut().enumerate() {
        *v = pred[j % per_frame];
    }
    let mut next_coeff = 0usize;
    let mut scores = Vec::with_capacity(probe.candidate_grid.len());
    for &cand in &probe.candidate_grid {
        let target = cand.min(cfg.m).min(n_blk);
        while next_coeff < target {
            let basis = codec.basis_vector(next_coeff);
            let c = coeffs[next_coeff];
            for (r, &bv) in recon.iter_mut().zip(&basis) {
                *r += c * bv;
            }
            next_coeff += 1;
        }
        let rec_clip = VideoClip::from_reconstruction(
            orig_block.t,
            clip.h,
            clip.w,
            clip.c,
            recon.clone(),
        )?;
        scores.push(probe.metric.score(&orig_block, &rec_clip)?);
    }
    Ok(scores)
}

/// Score prediction backend standing in for a learned scorer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ScoreBackend {
    Exact,
    /// Adds zero-mean Gaussian noise with std `sigma * (row max - row min)`.
    Noisy { sigma: f64, seed: u64 },
}

/// Predict scores for a batch of clips at one target block. Preceding
/// lengths are supplied by the caller (e.g. prior allocations).
pub fn predict_scores(
    clips: &[VideoClip],
    q: usize,
    lengths_before: &[Vec<usize>],
    backend: &ScoreBackend,
    metric: MetricKind,
    grid: &[usize],
    cfg: &PatchConfig,
) -> Result<ScoreTable> {
    if clips.len() != lengths_before.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} clips vs {} length prefixes",
            clips.len(),
            lengths_before.len()
        )));
    }
    if let ScoreBackend::Noisy { sigma, .. } = backend {
        if sigma.is_nan() || *sigma < 0.0 {
            return Err(Error::InvalidParam(format!("noise sigma {sigma} must be >= 0")));
        }
    }
    let rows: Vec<Result<Vec<f64>>> = clips
        .par_iter()
        .zip(lengths_before.par_iter())
        .enumerate()
        .map(|(row_idx, (clip, before))| {
            let probe = ScorerProbe {
                q,
                lengths_before: before.clone(),
                candidate_grid: grid.to_vec(),
                metric,
            };
            let mut row = ground_truth_scores(clip, &probe, cfg)?;
            if let ScoreBackend::Noisy { sigma, seed } = backend {
                if *sigma > 0.0 {
                    let lo = row.iter().cloned().fold(f64::INFINITY, f64::min);
                    let hi = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let std = sigma * (hi - lo);
                    if std > 0.0 {
                        let mut rng = ChaCha8Rng::seed_from_u64(subseed(
                            *seed,
                            "score-noise",
                            (q as u64) << 32 | row_idx as u64,
                        ));
                        let normal = Normal::new(0.0, std).expect("std > 0");
                        for v in row.iter_mut() {
                            *v += normal.sample(&mut rng);
                        }
                    }
                }
            }
            Ok(row)
        })
        .collect();
    let source = match backend {
        ScoreBackend::Exact => ScoreSource::Exact,
        ScoreBackend::Noisy { .. } => ScoreSource::Noisy,
    };
    let mut table = ScoreTable::new(clips.len(), 1, grid.to_vec(), metric, source);
    for (s, row) in rows.into_iter().enumerate() {
        table.set_row(s, 0, &row?);
    }
    Ok(table)
}

/// Mean squared difference between two score tables of identical shape.
pub fn score_loss(predicted: &ScoreTable, truth: &ScoreTable) -> Result<f64> {
    if predicted.samples != truth.samples
        || predicted.blocks != truth.blocks
        || predicted.grid != truth.grid
    {
        return Err(Error::ShapeMismatch(format!(
            "score tables {}x{}x{} vs {}x{}x{}",
            predicted.samples,
            predicted.blocks,
            predicted.grid.len(),
            truth.samples,
            truth.blocks,
            truth.grid.len()
        )));
    }
    let sum = compensated_sum(
        predicted
            .scores
            .iter()
            .zip(&truth.scores)
            .map(|(&p, &t)| (p - t) * (p - t)),
    );
    Ok(sum / predicted.scores.len() as f64)
}
