//! `atok` command line: corpus generation, encoding, scoring, allocation,
//! decoding, sweeps, and report summaries.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};

use atok_core::allocator::{
    allocate_bidelta, allocate_bithr, allocate_fixed, allocate_ilp_with, AllocationProblem,
    Strategy, DEFAULT_SEARCH_ITERS,
};
use atok_core::codec::{decode, encode, quantize_latents, LatentSequence};
use atok_core::config::RunConfig;
use atok_core::corpus::{read_corpus, write_corpus, CorpusSpec, SceneKind};
use atok_core::error::{Error, Result};
use atok_core::masking::sample_lengths;
use atok_core::metrics::MetricKind;
use atok_core::pipeline::{
    noise_robustness, parse_sweep_csv, sweep_with, write_allocations_csv, AllocationRecord,
    SweepOptions, SweepRow,
};
use atok_core::quantizer::Codebook;
use atok_core::scorer::{predict_scores, ScoreBackend, ScoreSource, ScoreTable};
use atok_core::seqpack::{pack, write_packed};
use atok_core::util::subseed;
use atok_core::video::VideoClip;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Parser)]
#[command(
    name = "atok",
    about = "Adaptive block-causal video tokenization testbed",
    version
)]
struct Cli {
    /// Run configuration file (flat key = value lines).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Base random seed.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,

    /// Output directory.
    #[arg(long, global = true, default_value = ".")]
    out: PathBuf,

    /// Report format for sweep outputs.
    #[arg(long, global = true, value_enum, default_value_t = Format::Csv)]
    format: Format,

    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic clip corpus.
    GenCorpus {
        /// Number of clips.
        #[arg(long, default_value_t = 64)]
        clips: usize,
        /// Comma-separated scene kinds with optional weights,
        /// e.g. "static:2,gradient,shapes,cut".
        #[arg(long, default_value = "static,gradient,shapes,cut")]
        kinds: String,
    },
    /// Encode every clip of a corpus to a latent file.
    Encode {
        /// Corpus directory of clip files.
        #[arg(long)]
        corpus: PathBuf,
        /// Optional codebook file; generated from the seed when absent.
        #[arg(long)]
        codebook: Option<PathBuf>,
        /// Also emit quantized ids packed with end-of-block markers.
        #[arg(long)]
        packed: bool,
    },
    /// Generate ground-truth score tables over the candidate grid.
    Score {
        #[arg(long)]
        corpus: PathBuf,
        /// Scoring metric (mse, psnr, ssim, pproxy).
        #[arg(long, default_value = "mse")]
        metric: String,
        /// Score every n-th candidate length instead of all of them.
        #[arg(long, default_value_t = 1)]
        grid_stride: usize,
    },
    /// Allocate token budgets from a score table.
    Allocate {
        /// Score CSV (sample,block,candidate,score).
        #[arg(long)]
        scores: PathBuf,
        #[arg(long)]
        strategy: String,
        /// Average tokens per block (N_b).
        #[arg(long)]
        budget: usize,
        /// Allow the ILP total to fall below the exact budget.
        #[arg(long)]
        relax: bool,
        /// Binary search iterations for bithr/bidelta.
        #[arg(long, default_value_t = DEFAULT_SEARCH_ITERS)]
        iters: usize,
    },
    /// Decode latent files at allocated or fixed lengths.
    Decode {
        /// Directory of latent files written by `encode`.
        #[arg(long)]
        latents: PathBuf,
        /// Allocation CSV from `allocate`; overrides --lengths.
        #[arg(long)]
        allocations: Option<PathBuf>,
        /// Comma-separated per-block lengths used for every clip.
        #[arg(long)]
        lengths: Option<String>,
        /// Original corpus for reference metrics.
        #[arg(long)]
        corpus: Option<PathBuf>,
    },
    /// Rate-distortion sweep over strategies, metrics, and budgets.
    Sweep {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, default_value = "fixed,bithr,bidelta,ilp")]
        strategies: String,
        #[arg(long, default_value = "mse")]
        metrics: String,
        #[arg(long, default_value = "4,8,16,32")]
        budgets: String,
        /// Record solver wall-clock time (reports stop being byte-stable).
        #[arg(long)]
        timing: bool,
        /// Share one budget across samples and blocks jointly.
        #[arg(long)]
        joint: bool,
        /// Score every n-th candidate length instead of all of them.
        #[arg(long, default_value_t = 1)]
        grid_stride: usize,
        /// Write each run's per-clip allocations next to the report.
        #[arg(long)]
        emit_allocations: bool,
        /// Additionally emit an ILP noise-robustness curve at these scorer
        /// noise levels.
        #[arg(long)]
        noise_sigmas: Option<String>,
        /// Noise seeds averaged per level.
        #[arg(long, default_value_t = 20)]
        noise_seeds: usize,
        /// Budget used for the robustness curve.
        #[arg(long, default_value_t = 8)]
        noise_budget: usize,
    },
    /// Summarize a sweep or robustness CSV and flag ordering violations.
    Report {
        #[arg(long)]
        input: PathBuf,
    },
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}

fn load_config(path: &Option<PathBuf>) -> Result<RunConfig> {
    match path {
        Some(p) => RunConfig::from_file(p),
        None => Ok(RunConfig::default()),
    }
}

fn parse_kinds(spec: &str, frames: usize) -> Result<Vec<(SceneKind, f64)>> {
    let mut kinds = Vec::new();
    for part in spec.split(',') {
        let part = part.trim();
        if part.is_empty() {
            continue;
        }
        let (name, weight) = match part.split_once(':') {
            Some((n, w)) => {
                let weight: f64 = w
                    .parse()
                    .map_err(|e| Error::InvalidParam(format!("weight '{w}': {e}")))?;
                (n, weight)
            }
            None => (part, 1.0),
        };
        let kind = match name {
            "static" => SceneKind::Static,
            "gradient" => SceneKind::DriftingGradient,
            "shapes" => SceneKind::MovingShapes { count: 3, speed: 1.5 },
            "cut" => SceneKind::SceneCut { position: frames / 2 },
            other => return Err(Error::InvalidParam(format!("unknown scene kind '{other}'"))),
        };
        kinds.push((kind, weight));
    }
    Ok(kinds)
}

fn parse_list<T: std::str::FromStr>(spec: &str, what: &str) -> Result<Vec<T>>
where
    T::Err: std::fmt::Display,
{
    spec.split(',')
        .map(|s| s.trim())
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse::<T>()
                .map_err(|e| Error::InvalidParam(format!("{what} '{s}': {e}")))
        })
        .collect()
}

fn latent_file_name(index: usize) -> String {
    format!("lat_{index:04}.bin")
}

fn run(cli: Cli) -> Result<()> {
    let run_cfg = load_config(&cli.config)?;
    run_cfg.validate()?;
    fs::create_dir_all(&cli.out)?;
    match cli.command {
        Command::GenCorpus { clips, kinds } => {
            let spec = CorpusSpec {
                n_clips: clips,
                dims: run_cfg.dims(),
                kinds: parse_kinds(&kinds, run_cfg.frames)?,
                seed: cli.seed,
            };
            let paths = write_corpus(&spec, &cli.out)?;
            println!("wrote {} clips to {}", paths.len(), cli.out.display());
        }
        Command::Encode { corpus, codebook, packed } => {
            let clips = read_corpus(&corpus)?;
            let cfg = run_cfg.patch_config()?;
            let book = match &codebook {
                Some(p) => Codebook::read_from(p)?,
                None => Codebook::random(
                    run_cfg.codebook_size,
                    run_cfg.codebook_dim,
                    &mut ChaCha8Rng::seed_from_u64(subseed(cli.seed, "codebook", 0)),
                )?,
            };
            let mut packed_seqs = Vec::new();
            for (i, clip) in clips.iter().enumerate() {
                let lat = encode(clip, &cfg)?;
                lat.write_to(&cli.out.join(latent_file_name(i)))?;
                if packed {
                    let ids = quantize_latents(&lat, &book)?;
                    let eob = book.count() as u32;
                    packed_seqs.push(pack(&ids, eob, &[], cfg.m, eob + 1)?);
                }
            }
            if packed {
                let mut f = fs::File::create(cli.out.join("packed.txt"))?;
                write_packed(&mut f, &packed_seqs)?;
            }
            println!("encoded {} clips to {}", clips.len(), cli.out.display());
        }
        Command::Score { corpus, metric, grid_stride } => {
            let clips = read_corpus(&corpus)?;
            let cfg = run_cfg.patch_config()?;
            let metric = MetricKind::from_name(&metric)?;
            let grid = run_cfg.strided_grid(grid_stride);
            let params = run_cfg.sampler_params()?;
            let mut table = ScoreTable::new(
                clips.len(),
                cfg.k,
                grid.clone(),
                metric,
                ScoreSource::Exact,
            );
            for q in 0..cfg.k {
                // Ground-truth protocol: preceding lengths drawn from the
                // training sampler, per clip.
                let prefixes: Vec<Vec<usize>> = (0..clips.len())
                    .map(|i| {
                        let mut rng = ChaCha8Rng::seed_from_u64(subseed(
                            cli.seed,
                            "score-prefix",
                            (q as u64) << 32 | i as u64,
                        ));
                        sample_lengths(&mut rng, q, &params)
                    })
                    .collect();
                let slice = predict_scores(
                    &clips,
                    q,
                    &prefixes,
                    &ScoreBackend::Exact,
                    metric,
                    &grid,
                    &cfg,
                )?;
                for s in 0..clips.len() {
                    table.set_row(s, q, slice.row(s, 0));
                }
            }
            let path = cli.out.join("scores.csv");
            let mut f = fs::File::create(&path)?;
            table.write_csv(&mut f)?;
            println!("wrote {}", path.display());
        }
        Command::Allocate { scores, strategy, budget, relax, iters } => {
            let text = fs::read_to_string(&scores)?;
            let table = ScoreTable::read_csv(text.as_bytes(), MetricKind::Mse)?;
            let strategy = Strategy::from_name(&strategy)?;
            let mut records = Vec::new();
            for b in 0..table.blocks {
                let problem =
                    AllocationProblem::new(table.block_rows(b), table.grid.clone(), budget)?;
                let alloc = match strategy {
                    Strategy::Fixed => allocate_fixed(&problem)?,
                    Strategy::Ilp => allocate_ilp_with(&problem, relax)?,
                    Strategy::BiThr => allocate_bithr(&problem, iters)?,
                    Strategy::BiDelta => allocate_bidelta(&problem, iters)?,
                };
                for (s, &tok) in alloc.tokens.iter().enumerate() {
                    let gi = table.grid.binary_search(&tok).expect("token on grid");
                    records.push(AllocationRecord {
                        sample: s,
                        block: b,
                        tokens: tok,
                        score: table.at(s, b, gi),
                    });
                }
            }
            let path = cli.out.join("allocations.csv");
            let mut f = fs::File::create(&path)?;
            write_allocations_csv(&mut f, &records)?;
            println!("wrote {}", path.display());
        }
        Command::Decode { latents, allocations, lengths, corpus } => {
            decode_command(&run_cfg, &cli.out, &latents, &allocations, &lengths, &corpus)?;
        }
        Command::Sweep {
            corpus,
            strategies,
            metrics,
            budgets,
            timing,
            joint,
            grid_stride,
            emit_allocations,
            noise_sigmas,
            noise_seeds,
            noise_budget,
        } => {
            let clips = read_corpus(&corpus)?;
            let strategies: Vec<Strategy> = parse_list::<String>(&strategies, "strategy")?
                .iter()
                .map(|s| Strategy::from_name(s))
                .collect::<Result<_>>()?;
            let metrics: Vec<MetricKind> = parse_list::<String>(&metrics, "metric")?
                .iter()
                .map(|m| MetricKind::from_name(m))
                .collect::<Result<_>>()?;
            let budgets: Vec<usize> = parse_list(&budgets, "budget")?;
            let out_dir = cli.out.clone();
            let report = sweep_with(
                &clips,
                &run_cfg,
                &strategies,
                &metrics,
                &budgets,
                cli.seed,
                cli.seed,
                &SweepOptions { timing, joint, grid_stride },
                |opts, out| {
                    if emit_allocations {
                        let name = format!(
                            "alloc_{}_{}_{}.csv",
                            opts.strategy.name(),
                            opts.metric.name(),
                            opts.n_b
                        );
                        let mut f = fs::File::create(out_dir.join(name))?;
                        write_allocations_csv(&mut f, &out.allocations)?;
                    }
                    Ok(())
                },
            )?;
            match cli.format {
                Format::Csv => {
                    let path = cli.out.join("sweep.csv");
                    let mut f = fs::File::create(&path)?;
                    report.write_csv(&mut f)?;
                    println!("wrote {}", path.display());
                }
                Format::Json => {
                    let path = cli.out.join("sweep.json");
                    fs::write(&path, report.to_json())?;
                    println!("wrote {}", path.display());
                }
            }
            if let Some(sigmas) = noise_sigmas {
                let sigmas: Vec<f64> = parse_list(&sigmas, "sigma")?;
                let metric = metrics.first().copied().unwrap_or(MetricKind::Mse);
                let rob = noise_robustness(
                    &clips,
                    &run_cfg,
                    metric,
                    noise_budget,
                    &sigmas,
                    noise_seeds,
                    cli.seed,
                    cli.seed,
                )?;
                match cli.format {
                    Format::Csv => {
                        let path = cli.out.join("robustness.csv");
                        let mut f = fs::File::create(&path)?;
                        rob.write_csv(&mut f)?;
                        println!("wrote {}", path.display());
                    }
                    Format::Json => {
                        let path = cli.out.join("robustness.json");
                        fs::write(&path, rob.to_json())?;
                        println!("wrote {}", path.display());
                    }
                }
                if !rob.monotone {
                    println!("warning: robustness curve is not monotone in noise level");
                }
            }
        }
        Command::Report { input } => {
            report_command(&input)?;
        }
    }
    Ok(())
}

fn decode_command(
    run_cfg: &RunConfig,
    out: &Path,
    latents: &Path,
    allocations: &Option<PathBuf>,
    lengths: &Option<String>,
    corpus: &Option<PathBuf>,
) -> Result<()> {
    let cfg = run_cfg.patch_config()?;
    let mut lat_paths: Vec<PathBuf> = fs::read_dir(latents)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .map(|n| n.starts_with("lat_") && n.ends_with(".bin"))
                .unwrap_or(false)
        })
        .collect();
    lat_paths.sort();
    if lat_paths.is_empty() {
        return Err(Error::Format(format!("no latent files in {}", latents.display())));
    }
    let per_sample_lengths: Vec<Vec<usize>> = if let Some(alloc_path) = allocations {
        let text = fs::read_to_string(alloc_path)?;
        let mut map: Vec<Vec<usize>> = vec![vec![0; cfg.k]; lat_paths.len()];
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || (lineno == 0 && line.starts_with("sample")) {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 4 {
                return Err(Error::Format(format!(
                    "allocation CSV line {}: expected 4 fields",
                    lineno + 1
                )));
            }
            let sample: usize = fields[0].parse().map_err(|e| {
                Error::Format(format!("allocation CSV line {}: {e}", lineno + 1))
            })?;
            let block: usize = fields[1].parse().map_err(|e| {
                Error::Format(format!("allocation CSV line {}: {e}", lineno + 1))
            })?;
            let tokens: usize = fields[2].parse().map_err(|e| {
                Error::Format(format!("allocation CSV line {}: {e}", lineno + 1))
            })?;
            if sample >= map.len() || block >= cfg.k {
                return Err(Error::Format(format!(
                    "allocation CSV line {}: sample {sample} / block {block} out of range",
                    lineno + 1
                )));
            }
            map[sample][block] = tokens;
        }
        map
    } else if let Some(spec) = lengths {
        let fixed: Vec<usize> = parse_list(spec, "length")?;
        if fixed.len() != cfg.k {
            return Err(Error::InvalidParam(format!(
                "--lengths needs {} comma-separated values",
                cfg.k
            )));
        }
        vec![fixed; lat_paths.len()]
    } else {
        vec![vec![cfg.m; cfg.k]; lat_paths.len()]
    };

    let references: Option<Vec<VideoClip>> = match corpus {
        Some(dir) => {
            let clips = read_corpus(dir)?;
            if clips.len() != lat_paths.len() {
                return Err(Error::ShapeMismatch(format!(
                    "{} reference clips vs {} latent files",
                    clips.len(),
                    lat_paths.len()
                )));
            }
            Some(clips)
        }
        None => None,
    };
    let metrics_path = out.join("decode_metrics.csv");
    let mut metrics_file = fs::File::create(&metrics_path)?;
    writeln!(metrics_file, "sample,mse,psnr,ssim,pproxy")?;
    for (i, path) in lat_paths.iter().enumerate() {
        let lat = LatentSequence::read_from(path)?;
        let reference = references.as_ref().map(|r| &r[i]);
        let report = decode(&lat, &per_sample_lengths[i], &cfg, run_cfg.dims(), reference)?;
        report.clip.write_to(&out.join(format!("recon_{i:04}.bin")))?;
        if let Some(orig) = reference {
            writeln!(
                metrics_file,
                "{i},{},{},{},{}",
                atok_core::metrics::mse(orig, &report.clip)?,
                atok_core::metrics::psnr(orig, &report.clip, 1.0)?,
                atok_core::metrics::ssim(orig, &report.clip)?,
                atok_core::metrics::perceptual_proxy(orig, &report.clip)?,
            )?;
        }
    }
    println!("decoded {} clips to {}", lat_paths.len(), out.display());
    Ok(())
}

fn report_command(input: &Path) -> Result<()> {
    let text = fs::read_to_string(input)?;
    let header = text.lines().next().unwrap_or("");
    if header.starts_with("sigma") {
        // Robustness CSV.
        println!("{:>8} {:>16} {:>6} {:>10}", "sigma", "distortion", "seeds", "violation");
        let mut violations = 0usize;
        for line in text.lines().skip(1) {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() == 4 {
                println!("{:>8} {:>16} {:>6} {:>10}", f[0], f[1], f[2], f[3]);
                if f[3] == "true" {
                    violations += 1;
                }
            }
        }
        if violations > 0 {
            println!("VIOLATION: distortion decreased at {violations} noise level(s)");
        } else {
            println!("robustness curve is monotone");
        }
        return Ok(());
    }
    let rows = parse_sweep_csv(&text)?;
    println!(
        "{:>8} {:>8} {:>8} {:>16} {:>12} {:>12}",
        "strategy", "metric", "budget", "distortion", "tokens", "runtime_ms"
    );
    for row in &rows {
        println!(
            "{:>8} {:>8} {:>8} {:>16.8} {:>12.4} {:>12}",
            row.strategy,
            row.metric,
            row.budget,
            row.mean_distortion,
            row.mean_tokens,
            row.runtime_ms.map(|v| format!("{v:.2}")).unwrap_or_default()
        );
    }
    // Rate-distortion monotonicity per (strategy, metric).
    let mut groups: Vec<(&str, &str)> = rows
        .iter()
        .map(|r| (r.strategy.as_str(), r.metric.as_str()))
        .collect();
    groups.sort_unstable();
    groups.dedup();
    let mut violations = 0usize;
    for (strategy, metric) in groups {
        let mut series: Vec<&SweepRow> = rows
            .iter()
            .filter(|r| r.strategy == strategy && r.metric == metric)
            .collect();
        series.sort_by_key(|r| r.budget);
        for pair in series.windows(2) {
            if pair[1].mean_distortion >= pair[0].mean_distortion {
                println!(
                    "VIOLATION: {strategy}/{metric} distortion did not decrease \
                     from budget {} to {}",
                    pair[0].budget, pair[1].budget
                );
                violations += 1;
            }
        }
    }
    if violations == 0 {
        println!("distortion decreases with budget for every strategy/metric");
    }
    Ok(())
}
