//! End-to-end runs: encode, score, allocate, decode, and report.
//!
//! A run processes blocks in temporal order. For each block it computes
//! scores conditioned on the lengths already chosen for earlier blocks,
//! solves the allocation for the batch, and feeds the chosen lengths
//! forward. After the last block every clip is decoded closed-loop at its
//! allocated lengths and the distortion metric is evaluated against the
//! original.
//!
//! Reports are byte-identical across runs for identical (corpus, seed,
//! config) inputs; wall-clock solver timing is therefore opt-in via
//! [`PipelineOptions::timing`] and reported as an optional column.

use std::io::Write;
use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::Serialize;

use crate::allocator::{
    allocate_bidelta, allocate_bithr, allocate_fixed, allocate_ilp, AllocationProblem, Strategy,
    DEFAULT_SEARCH_ITERS,
};
use crate::codec::code_at;
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::metrics::MetricKind;
use crate::scorer::{predict_scores, ScoreBackend};
use crate::video::VideoClip;

/// Options for one pipeline run.
#[derive(Debug, Clone)]
pub struct PipelineOptions {
    pub strategy: Strategy,
    pub metric: MetricKind,
    pub n_b: usize,
    pub backend: ScoreBackend,
    pub search_iters: usize,
    /// Record solver wall-clock time (breaks byte-identical reports).
    pub timing: bool,
    /// Allocate across samples and blocks jointly as `B*K` pseudo-samples.
    /// Scores are then conditioned on a uniform `N_b` prefix instead of the
    /// actual choices, since joint allocation fixes all blocks at once.
    pub joint: bool,
    /// Candidate-grid subsampling: score every `grid_stride`-th length.
    pub grid_stride: usize,
}

impl PipelineOptions {
    pub fn new(strategy: Strategy, metric: MetricKind, n_b: usize) -> Self {
        PipelineOptions {
            strategy,
            metric,
            n_b,
            backend: ScoreBackend::Exact,
            search_iters: DEFAULT_SEARCH_ITERS,
            timing: false,
            joint: false,
            grid_stride: 1,
        }
    }
}

/// One `(strategy, metric, budget)` report row.
#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct SweepRow {
    pub strategy: String,
    pub metric: String,
    pub budget: usize,
    pub mean_distortion: f64,
    pub mean_tokens: f64,
    pub runtime_ms: Option<f64>,
}

/// Per-sample, per-block allocation record.
#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct AllocationRecord {
    pub sample: usize,
    pub block: usize,
    pub tokens: usize,
    pub score: f64,
}

/// Output of one pipeline run.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub row: SweepRow,
    pub allocations: Vec<AllocationRecord>,
    /// Final per-clip block lengths.
    pub lengths: Vec<Vec<usize>>,
}

fn solve(
    problem: &AllocationProblem,
    strategy: Strategy,
    search_iters: usize,
) -> Result<crate::allocator::Allocation> {
    match strategy {
        Strategy::Fixed => allocate_fixed(problem),
        Strategy::Ilp => allocate_ilp(problem),
        Strategy::BiThr => allocate_bithr(problem, search_iters),
        Strategy::BiDelta => allocate_bidelta(problem, search_iters),
    }
}

/// Run score -> allocate over every block in temporal order, then decode
/// and evaluate.
pub fn run_pipeline(
    clips: &[VideoClip],
    run_cfg: &RunConfig,
    opts: &PipelineOptions,
) -> Result<RunOutput> {
    if clips.is_empty() {
        return Err(Error::InvalidParam("empty corpus".into()));
    }
    let cfg = run_cfg.patch_config()?;
    let grid = run_cfg.strided_grid(opts.grid_stride);
    let k = cfg.k;
    let b = clips.len();
    let mut chosen: Vec<Vec<usize>> = vec![Vec::with_capacity(k); b];
    let mut records = Vec::with_capacity(b * k);
    let mut solver_time = Duration::ZERO;

    if opts.joint {
        // One multiple-choice knapsack over B*K pseudo-samples.
        let mut rows = vec![Vec::new(); b * k];
        let mut score_rows = vec![Vec::new(); b * k];
        for q in 0..k {
            let prefix = vec![vec![opts.n_b; q]; b];
            let table =
                predict_scores(clips, q, &prefix, &opts.backend, opts.metric, &grid, &cfg)?;
            for s in 0..b {
                rows[s * k + q] = table.row(s, 0).to_vec();
                score_rows[s * k + q] = table.row(s, 0).to_vec();
            }
        }
        let problem = AllocationProblem::new(rows, grid.clone(), opts.n_b)?;
        let start = Instant::now();
        let alloc = solve(&problem, opts.strategy, opts.search_iters)?;
        solver_time += start.elapsed();
        for s in 0..b {
            for q in 0..k {
                let tok = alloc.tokens[s * k + q];
                let gi = grid.binary_search(&tok).expect("token on grid");
                records.push(AllocationRecord {
                    sample: s,
                    block: q,
                    tokens: tok,
                    score: score_rows[s * k + q][gi],
                });
                chosen[s].push(tok);
            }
        }
    } else {
        for q in 0..k {
            let table =
                predict_scores(clips, q, &chosen, &opts.backend, opts.metric, &grid, &cfg)?;
            let problem = AllocationProblem::new(table.block_rows(0), grid.clone(), opts.n_b)?;
            let start = Instant::now();
            let alloc = solve(&problem, opts.strategy, opts.search_iters)?;
            solver_time += start.elapsed();
            for (s, &tok) in alloc.tokens.iter().enumerate() {
                let gi = grid.binary_search(&tok).expect("token on grid");
                records.push(AllocationRecord {
                    sample: s,
                    block: q,
                    tokens: tok,
                    score: table.at(s, 0, gi),
                });
                chosen[s].push(tok);
            }
        }
    }

    // Decode each clip closed-loop at its allocated lengths and evaluate.
    let distortions: Vec<f64> = clips
        .par_iter()
        .zip(chosen.par_iter())
        .map(|(clip, lengths)| -> Result<f64> {
            let (_, report) = code_at(clip, lengths, &cfg)?;
            opts.metric.score(clip, &report.clip)
        })
        .collect::<Result<Vec<f64>>>()?;
    let mean_distortion = distortions.iter().sum::<f64>() / b as f64;
    let total_tokens: usize = chosen.iter().map(|l| l.iter().sum::<usize>()).sum();
    let mean_tokens = total_tokens as f64 / (b * k) as f64;

    Ok(RunOutput {
        row: SweepRow {
            strategy: opts.strategy.name().to_string(),
            metric: opts.metric.name().to_string(),
            budget: opts.n_b,
            mean_distortion,
            mean_tokens,
            runtime_ms: opts.timing.then_some(solver_time.as_secs_f64() * 1e3),
        },
        allocations: records,
        lengths: chosen,
    })
}

/// Report metadata: seeds and a config fingerprint.
#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct ReportMeta {
    pub corpus_seed: u64,
    pub run_seed: u64,
    pub config_hash: String,
}

/// Rows for the cross product of strategies, metrics, and budgets.
#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct SweepReport {
    pub meta: ReportMeta,
    pub rows: Vec<SweepRow>,
}

impl SweepReport {
    pub fn write_csv<W: Write>(&self, out: &mut W) -> Result<()> {
        writeln!(out, "strategy,metric,budget,mean_distortion,mean_tokens,runtime_ms")?;
        for row in &self.rows {
            let rt = row.runtime_ms.map(|v| v.to_string()).unwrap_or_default();
            writeln!(
                out,
                "{},{},{},{},{},{rt}",
                row.strategy, row.metric, row.budget, row.mean_distortion, row.mean_tokens
            )?;
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Parse a sweep CSV back into rows (for the report command).
pub fn parse_sweep_csv(text: &str) -> Result<Vec<SweepRow>> {
    let mut rows = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || (lineno == 0 && line.starts_with("strategy")) {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 6 {
            return Err(Error::Format(format!(
                "sweep CSV line {}: expected 6 fields",
                lineno + 1
            )));
        }
        let err = |e: String| Error::Format(format!("sweep CSV line {}: {e}", lineno + 1));
        rows.push(SweepRow {
            strategy: fields[0].to_string(),
            metric: fields[1].to_string(),
            budget: fields[2].parse().map_err(|e| err(format!("{e}")))?,
            mean_distortion: fields[3].parse().map_err(|e| err(format!("{e}")))?,
            mean_tokens: fields[4].parse().map_err(|e| err(format!("{e}")))?,
            runtime_ms: if fields[5].is_empty() {
                None
            } else {
                Some(fields[5].parse().map_err(|e| err(format!("{e}")))?)
            },
        });
    }
    Ok(rows)
}

/// Sweep-wide settings applied to every run in the cross product.
#[derive(Debug, Clone)]
pub struct SweepOptions {
    pub timing: bool,
    pub joint: bool,
    pub grid_stride: usize,
}

impl Default for SweepOptions {
    fn default() -> Self {
        SweepOptions { timing: false, joint: false, grid_stride: 1 }
    }
}

/// Cross product of runs; row order is metrics, then strategies, then
/// budgets.
#[allow(clippy::too_many_arguments)]
pub fn sweep(
    clips: &[VideoClip],
    run_cfg: &RunConfig,
    strategies: &[Strategy],
    metrics: &[MetricKind],
    budgets: &[usize],
    corpus_seed: u64,
    run_seed: u64,
    sweep_opts: &SweepOptions,
) -> Result<SweepReport> {
    sweep_with(
        clips,
        run_cfg,
        strategies,
        metrics,
        budgets,
        corpus_seed,
        run_seed,
        sweep_opts,
        |_, _| Ok(()),
    )
}

/// [`sweep`] with a per-run callback, e.g. for emitting each run's
/// per-clip allocations.
#[allow(clippy::too_many_arguments)]
pub fn sweep_with<F>(
    clips: &[VideoClip],
    run_cfg: &RunConfig,
    strategies: &[Strategy],
    metrics: &[MetricKind],
    budgets: &[usize],
    corpus_seed: u64,
    run_seed: u64,
    sweep_opts: &SweepOptions,
    mut on_run: F,
) -> Result<SweepReport>
where
    F: FnMut(&PipelineOptions, &RunOutput) -> Result<()>,
{
    let mut rows = Vec::with_capacity(strategies.len() * metrics.len() * budgets.len());
    for &metric in metrics {
        for &strategy in strategies {
            for &n_b in budgets {
                let mut opts = PipelineOptions::new(strategy, metric, n_b);
                opts.timing = sweep_opts.timing;
                opts.joint = sweep_opts.joint;
                opts.grid_stride = sweep_opts.grid_stride;
                let out = run_pipeline(clips, run_cfg, &opts)?;
                on_run(&opts, &out)?;
                rows.push(out.row);
            }
        }
    }
    Ok(SweepReport {
        meta: ReportMeta {
            corpus_seed,
            run_seed,
            config_hash: format!("{:016x}", run_cfg.hash()),
        },
        rows,
    })
}

/// One noise level of the robustness curve.
#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct RobustnessRow {
    pub sigma: f64,
    pub mean_distortion: f64,
    pub seeds: usize,
    /// Set when this row's distortion dropped below the previous (less
    /// noisy) row's, violating the expected ordering.
    pub violation: bool,
}

/// Realized-distortion-vs-scorer-noise report.
#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct RobustnessReport {
    pub meta: ReportMeta,
    pub strategy: String,
    pub metric: String,
    pub budget: usize,
    pub rows: Vec<RobustnessRow>,
    pub monotone: bool,
}

impl RobustnessReport {
    pub fn write_csv<W: Write>(&self, out: &mut W) -> Result<()> {
        writeln!(out, "sigma,mean_distortion,seeds,violation")?;
        for row in &self.rows {
            writeln!(
                out,
                "{},{},{},{}",
                row.sigma, row.mean_distortion, row.seeds, row.violation
            )?;
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// ILP distortion as scorer noise grows, averaged over `n_seeds` noise
/// seeds per level. Emitted whether or not the curve is monotone; any
/// decrease is flagged per row and in `monotone`.
#[allow(clippy::too_many_arguments)]
pub fn noise_robustness(
    clips: &[VideoClip],
    run_cfg: &RunConfig,
    metric: MetricKind,
    n_b: usize,
    sigmas: &[f64],
    n_seeds: usize,
    corpus_seed: u64,
    run_seed: u64,
) -> Result<RobustnessReport> {
    if n_seeds == 0 {
        return Err(Error::InvalidParam("need at least one noise seed".into()));
    }
    let mut rows: Vec<RobustnessRow> = Vec::with_capacity(sigmas.len());
    for &sigma in sigmas {
        if sigma.is_nan() || sigma < 0.0 {
            return Err(Error::InvalidParam(format!("noise sigma {sigma} must be >= 0")));
        }
        // Zero noise is deterministic across seeds; run it once.
        let reps = if sigma == 0.0 { 1 } else { n_seeds };
        let mut total = 0.0;
        for rep in 0..reps {
            let mut opts = PipelineOptions::new(Strategy::Ilp, metric, n_b);
            opts.backend = ScoreBackend::Noisy {
                sigma,
                seed: crate::util::subseed(run_seed, "robustness", rep as u64),
            };
            total += run_pipeline(clips, run_cfg, &opts)?.row.mean_distortion;
        }
        let mean = total / reps as f64;
        let violation = rows.last().is_some_and(|prev| mean < prev.mean_distortion);
        rows.push(RobustnessRow { sigma, mean_distortion: mean, seeds: reps, violation });
    }
    let monotone = rows.iter().all(|r| !r.violation);
    Ok(RobustnessReport {
        meta: ReportMeta {
            corpus_seed,
            run_seed,
            config_hash: format!("{:016x}", run_cfg.hash()),
        },
        strategy: Strategy::Ilp.name().to_string(),
        metric: metric.name().to_string(),
        budget: n_b,
        rows,
        monotone,
    })
}

/// `sample,block,tokens,score` CSV.
pub fn write_allocations_csv<W: Write>(out: &mut W, records: &[AllocationRecord]) -> Result<()> {
    writeln!(out, "sample,block,tokens,score")?;
    for r in records {
        writeln!(out, "{},{},{},{}", r.sample, r.block, r.tokens, r.score)?;
    }
    Ok(())
}
