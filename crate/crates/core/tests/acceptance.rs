//! Acceptance suite: every release-gating property, one test per
//! criterion, each printing a single pass/fail line.
//!
//! Run with `cargo test -p atok-core --test acceptance -- --nocapture`
//! to see the per-criterion lines.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use atok_core::allocator::{allocate_ilp, verify_optimal, AllocationProblem, Strategy};
use atok_core::codec::{code_at, decode, encode};
use atok_core::config::RunConfig;
use atok_core::corpus::{gen_corpus, CorpusSpec};
use atok_core::masking::{
    decoder_base_mask, decoder_mask, encoder_mask, latent_mask, masked_attention_forward,
    sample_lengths, scorer_mask, SamplerParams,
};
use atok_core::metrics::MetricKind;
use atok_core::patchify::PatchConfig;
use atok_core::pipeline::{noise_robustness, run_pipeline, PipelineOptions};
use atok_core::quantizer::{svq_argmax, svq_sample, Codebook};
use atok_core::scorer::{predict_scores, score_loss, ScoreBackend};
use atok_core::seqpack::{nll, pack, unpack, OracleModel, UniformModel};
use atok_core::util::Mat;
use atok_core::video::VideoClip;

const CORPUS_SEED: u64 = 2024;

fn report(n: usize, name: &str, outcome: Result<(), String>) {
    match &outcome {
        Ok(()) => println!("criterion {n:2} PASS  {name}"),
        Err(msg) => println!("criterion {n:2} FAIL  {name}: {msg}"),
    }
    if let Err(msg) = outcome {
        panic!("criterion {n} failed: {msg}");
    }
}

fn default_corpus() -> Vec<VideoClip> {
    let cfg = RunConfig::default();
    let spec = CorpusSpec::default_mix(64, cfg.dims(), CORPUS_SEED);
    gen_corpus(&spec).expect("corpus generates")
}

/// Deterministic stream of small allocation instances (B <= 4, <= 6
/// candidates, target always on the grid so every instance is feasible).
fn random_instances(count: usize, seed: u64) -> Vec<AllocationProblem> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let b = rng.random_range(1..=4usize);
            let cols = rng.random_range(1..=6usize);
            let mut pool: Vec<usize> = (1..=12).collect();
            for i in (1..pool.len()).rev() {
                let j = rng.random_range(0..=i);
                pool.swap(i, j);
            }
            let mut grid: Vec<usize> = pool.into_iter().take(cols).collect();
            grid.sort_unstable();
            let scores: Vec<Vec<f64>> = (0..b)
                .map(|_| (0..grid.len()).map(|_| rng.random::<f64>()).collect())
                .collect();
            let n_b = grid[rng.random_range(0..grid.len())];
            AllocationProblem::new(scores, grid, n_b).expect("valid instance")
        })
        .collect()
}

#[test]
fn criterion_01_ilp_exactness() {
    let outcome = (|| {
        let instances = random_instances(1000, 101);
        let start = Instant::now();
        for (i, problem) in instances.iter().enumerate() {
            let alloc = allocate_ilp(problem).map_err(|e| format!("instance {i}: {e}"))?;
            let ok = verify_optimal(problem, &alloc, 4)
                .map_err(|e| format!("instance {i}: {e}"))?;
            if !ok {
                return Err(format!("instance {i}: DP objective differs from brute force"));
            }
        }
        let elapsed = start.elapsed();
        if elapsed.as_secs_f64() >= 5.0 {
            return Err(format!("1000 instances took {elapsed:?}, budget is 5 s"));
        }
        Ok(())
    })();
    report(1, "ILP objective equals brute force on 1000 instances in < 5 s", outcome);
}

#[test]
fn criterion_02_budget_exactness() {
    let outcome = (|| {
        for (i, problem) in random_instances(1000, 101).iter().enumerate() {
            let alloc = allocate_ilp(problem).map_err(|e| format!("instance {i}: {e}"))?;
            let total: usize = alloc.tokens.iter().sum();
            if total != problem.batch() * problem.n_b {
                return Err(format!(
                    "instance {i}: total {total} != {}",
                    problem.batch() * problem.n_b
                ));
            }
            for &t in &alloc.tokens {
                if !problem.grid.contains(&t) {
                    return Err(format!("instance {i}: token {t} not on the grid"));
                }
            }
        }
        Ok(())
    })();
    report(2, "ILP meets the exact batch budget with one grid value per sample", outcome);
}

#[test]
fn criterion_03_strategy_ordering() {
    let outcome = (|| {
        let run_cfg = RunConfig::default();
        let clips = default_corpus();
        for n_b in [4usize, 8, 16] {
            let run = |strategy: Strategy| -> Result<(f64, f64), String> {
                let opts = PipelineOptions::new(strategy, MetricKind::Mse, n_b);
                let row = run_pipeline(&clips, &run_cfg, &opts)
                    .map_err(|e| e.to_string())?
                    .row;
                Ok((row.mean_distortion, row.mean_tokens))
            };
            let (ilp, ilp_tokens) = run(Strategy::Ilp)?;
            if ilp_tokens != n_b as f64 {
                return Err(format!("budget {n_b}: ILP mean tokens {ilp_tokens} not exact"));
            }
            for other in [Strategy::Fixed, Strategy::BiThr, Strategy::BiDelta] {
                let (d, tokens) = run(other)?;
                if (tokens - n_b as f64).abs() > 1.0 {
                    return Err(format!(
                        "budget {n_b}: {} mean tokens {tokens} strayed past 1",
                        other.name()
                    ));
                }
                if ilp > d {
                    return Err(format!(
                        "budget {n_b}: ilp {ilp} > {} {d}",
                        other.name()
                    ));
                }
            }
        }
        Ok(())
    })();
    report(3, "mean MSE: ILP <= Fixed, BiThr, BiDelta at budgets 4, 8, 16", outcome);
}

#[test]
fn criterion_04_rate_distortion_monotonicity() {
    let outcome = (|| {
        let run_cfg = RunConfig::default();
        let clips = default_corpus();
        let mut prev = f64::INFINITY;
        for n_b in [4usize, 8, 16, 32] {
            let opts = PipelineOptions::new(Strategy::Ilp, MetricKind::Mse, n_b);
            let d = run_pipeline(&clips, &run_cfg, &opts)
                .map_err(|e| e.to_string())?
                .row
                .mean_distortion;
            if d >= prev {
                return Err(format!("distortion {d} did not decrease at budget {n_b} (prev {prev})"));
            }
            prev = d;
        }
        Ok(())
    })();
    report(4, "ILP distortion strictly decreases as the budget doubles", outcome);
}

#[test]
fn criterion_05_structural_causality() {
    let outcome = (|| {
        let mut rng = ChaCha8Rng::seed_from_u64(505);
        for trial in 0..100 {
            let k = rng.random_range(1..=4usize);
            let m = rng.random_range(1..=4usize);
            let l = k * rng.random_range(1..=4usize);
            let enc = encoder_mask(l, k, m).map_err(|e| e.to_string())?;
            let base = decoder_base_mask(l, k, m).map_err(|e| e.to_string())?;
            let lengths: Vec<usize> = (0..k).map(|_| rng.random_range(0..=m)).collect();
            let drop = latent_mask(&lengths, m).map_err(|e| e.to_string())?;
            let dec = decoder_mask(&base, &drop).map_err(|e| e.to_string())?;
            let q = rng.random_range(0..k);
            let before: Vec<usize> = (0..q).map(|_| rng.random_range(0..=m)).collect();
            let sco = scorer_mask(k, m, &before, q).map_err(|e| e.to_string())?;
            for (name, mask) in [("encoder", &enc), ("decoder", &dec), ("scorer", &sco)] {
                if !mask.is_block_causal() {
                    return Err(format!("trial {trial}: {name} mask attends to a later block"));
                }
            }
        }
        Ok(())
    })();
    report(5, "every mask entry with block(col) > block(row) is zero", outcome);
}

#[test]
fn criterion_06_behavioral_causality() {
    let outcome = (|| {
        let mut rng = ChaCha8Rng::seed_from_u64(606);
        // Attention outputs for block-b queries are invariant to suffix
        // perturbations.
        for trial in 0..100 {
            let k = rng.random_range(2..=4usize);
            let m = rng.random_range(1..=3usize);
            let l = k * rng.random_range(1..=3usize);
            let mask = encoder_mask(l, k, m).map_err(|e| e.to_string())?;
            let n = l + k * m;
            let dim = rng.random_range(1..=4usize);
            let rand_mat = |rng: &mut ChaCha8Rng, cols: usize| {
                Mat::from_vec(n, cols, (0..n * cols).map(|_| rng.random::<f64>()).collect())
                    .unwrap()
            };
            let q = rand_mat(&mut rng, dim);
            let km = rand_mat(&mut rng, dim);
            let v = rand_mat(&mut rng, 2);
            let out1 = masked_attention_forward(&q, &km, &v, &mask).map_err(|e| e.to_string())?;
            let cut = rng.random_range(0..k - 1); // blocks <= cut stay clean
            let mut k2 = km.clone();
            let mut v2 = v.clone();
            for pos in 0..n {
                if mask.labels[pos].block > cut {
                    for val in k2.row_mut(pos) {
                        *val = rng.random::<f64>() * 1e3 - 500.0;
                    }
                    for val in v2.row_mut(pos) {
                        *val = rng.random::<f64>() * 1e3 - 500.0;
                    }
                }
            }
            let out2 = masked_attention_forward(&q, &k2, &v2, &mask).map_err(|e| e.to_string())?;
            for pos in 0..n {
                if mask.labels[pos].block <= cut {
                    for c in 0..out1.cols {
                        let delta = (out1.at(pos, c) - out2.at(pos, c)).abs();
                        if delta > 1e-12 {
                            return Err(format!(
                                "trial {trial}: block-{} query moved by {delta}",
                                mask.labels[pos].block
                            ));
                        }
                    }
                }
            }
        }
        // Codec prefix decode is bit-identical under future-length changes.
        let cfg = PatchConfig::new(2, 2, 4, 8).unwrap();
        for trial in 0..20 {
            let mut crng = ChaCha8Rng::seed_from_u64(6000 + trial);
            let data: Vec<f64> = (0..8 * 4 * 4).map(|_| crng.random::<f64>()).collect();
            let clip = VideoClip::new(8, 4, 4, 1, data).unwrap();
            let lat = encode(&clip, &cfg).map_err(|e| e.to_string())?;
            let cut = crng.random_range(0..3usize);
            let mut la = vec![0usize; 4];
            let mut lb = vec![0usize; 4];
            for i in 0..4 {
                let shared = crng.random_range(0..=8usize);
                la[i] = shared;
                lb[i] = if i <= cut { shared } else { crng.random_range(0..=8usize) };
            }
            let ra = decode(&lat, &la, &cfg, clip.dims(), None).map_err(|e| e.to_string())?;
            let rb = decode(&lat, &lb, &cfg, clip.dims(), None).map_err(|e| e.to_string())?;
            let frames_per_block = 2;
            let per_frame = 16;
            let upto = (cut + 1) * frames_per_block * per_frame;
            if ra.clip.data[..upto] != rb.clip.data[..upto] {
                return Err(format!("trial {trial}: prefix decode changed with future lengths"));
            }
        }
        Ok(())
    })();
    report(6, "suffix perturbations leave causal outputs unchanged (<= 1e-12 / bit-exact)", outcome);
}

#[test]
fn criterion_07_parseval_exactness() {
    let outcome = (|| {
        // Block 0 over every length; 100 random clips.
        let cfg = PatchConfig::new(2, 2, 2, 16).unwrap();
        let n_blk = 256.0; // 4 frames of 8x8
        for trial in 0..100u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(700 + trial);
            let data: Vec<f64> = (0..8 * 8 * 8).map(|_| rng.random::<f64>()).collect();
            let clip = VideoClip::new(8, 8, 8, 1, data).unwrap();
            for len in 0..=16usize {
                let (_, report) = code_at(&clip, &[len, 0], &cfg).map_err(|e| e.to_string())?;
                let predicted = report.dropped_energy[0] / n_blk;
                let gap = (report.per_block_mse[0] - predicted).abs();
                if gap > 1e-9 {
                    return Err(format!(
                        "clip {trial} length {len}: |measured - parseval| = {gap}"
                    ));
                }
            }
        }
        Ok(())
    })();
    report(7, "truncation MSE equals tail energy / element count within 1e-9", outcome);
}

#[test]
fn criterion_08_svq_distribution() {
    let outcome = (|| {
        // Sampling frequencies vs the closed-form softmax, L1 <= 0.02.
        let mut rng = ChaCha8Rng::seed_from_u64(808);
        let book = Codebook::random(4, 3, &mut rng).unwrap();
        let input: Vec<f64> = (0..3).map(|_| rng.random::<f64>() - 0.5).collect();
        let v = Mat::from_vec(1, 3, input.clone()).unwrap();
        // Closed form computed independently of the quantizer path.
        let vn = input.iter().map(|x| x * x).sum::<f64>().sqrt();
        let logits: Vec<f64> = (0..4)
            .map(|i| {
                let code = book.code(i);
                let cn = code.iter().map(|x| x * x).sum::<f64>().sqrt();
                input.iter().zip(code).map(|(a, b)| a * b).sum::<f64>() / (vn * cn)
            })
            .collect();
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
        let z: f64 = exps.iter().sum();
        let probs: Vec<f64> = exps.iter().map(|e| e / z).collect();

        let n = 100_000;
        let mut counts = [0usize; 4];
        let mut draw_rng = ChaCha8Rng::seed_from_u64(809);
        for _ in 0..n {
            let out = svq_sample(&v, &book, &mut draw_rng).map_err(|e| e.to_string())?;
            counts[out.indices[0]] += 1;
        }
        let l1: f64 = counts
            .iter()
            .zip(&probs)
            .map(|(&c, &p)| (c as f64 / n as f64 - p).abs())
            .sum();
        if l1 > 0.02 {
            return Err(format!("L1 distance {l1} > 0.02"));
        }

        // Argmax agrees with the exhaustive nearest-by-cosine scan.
        let book = Codebook::random(16, 4, &mut ChaCha8Rng::seed_from_u64(810)).unwrap();
        let mut in_rng = ChaCha8Rng::seed_from_u64(811);
        for trial in 0..1000 {
            let row: Vec<f64> = (0..4).map(|_| in_rng.random::<f64>() * 2.0 - 1.0).collect();
            let v = Mat::from_vec(1, 4, row.clone()).unwrap();
            let got = svq_argmax(&v, &book).map_err(|e| e.to_string())?.indices[0];
            let vn = row.iter().map(|x| x * x).sum::<f64>().sqrt();
            let mut best = 0;
            let mut best_sim = f64::NEG_INFINITY;
            for i in 0..book.count() {
                let code = book.code(i);
                let cn = code.iter().map(|x| x * x).sum::<f64>().sqrt();
                let sim: f64 =
                    row.iter().zip(code).map(|(a, b)| a * b).sum::<f64>() / (vn * cn);
                if sim > best_sim {
                    best_sim = sim;
                    best = i;
                }
            }
            if got != best {
                return Err(format!("trial {trial}: argmax {got} vs scan {best}"));
            }
        }
        Ok(())
    })();
    report(8, "SVQ frequencies match the softmax within L1 0.02; argmax matches the scan", outcome);
}

#[test]
fn criterion_09_sampler_statistics() {
    let outcome = (|| {
        let params = SamplerParams::new(256.0, 128.0, 32, 512).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(909);
        let draws = sample_lengths(&mut rng, 100_000, &params);
        let n = draws.len() as f64;
        let mean = draws.iter().map(|&v| v as f64).sum::<f64>() / n;
        let var = draws.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n;
        let std = var.sqrt();

        // Analytic truncated-normal moments via the standard formulas.
        let normal = statrs::distribution::Normal::new(0.0, 1.0).unwrap();
        use statrs::distribution::{Continuous, ContinuousCDF};
        let (mu, sigma) = (256.0, 128.0);
        let alpha = (32.0 - mu) / sigma;
        let beta = (512.0 - mu) / sigma;
        let z = normal.cdf(beta) - normal.cdf(alpha);
        let phi_a = normal.pdf(alpha);
        let phi_b = normal.pdf(beta);
        let true_mean = mu + sigma * (phi_a - phi_b) / z;
        let true_var = sigma * sigma
            * (1.0 + (alpha * phi_a - beta * phi_b) / z - ((phi_a - phi_b) / z).powi(2));
        let true_std = true_var.sqrt();

        let mean_err = (mean - true_mean).abs() / true_mean;
        let std_err = (std - true_std).abs() / true_std;
        if mean_err > 0.01 {
            return Err(format!(
                "mean {mean:.3} vs analytic {true_mean:.3} ({:.2}% off)",
                mean_err * 100.0
            ));
        }
        if std_err > 0.02 {
            return Err(format!(
                "std {std:.3} vs analytic {true_std:.3} ({:.2}% off)",
                std_err * 100.0
            ));
        }
        Ok(())
    })();
    report(9, "truncated-Gaussian draws match analytic mean (1%) and std (2%)", outcome);
}

#[test]
fn criterion_10_pack_unpack_and_nll() {
    let outcome = (|| {
        let mut rng = ChaCha8Rng::seed_from_u64(1010);
        let c = 100u32;
        for trial in 0..10_000 {
            let k = rng.random_range(1..=4usize);
            let blocks: Vec<Vec<u32>> = (0..k)
                .map(|_| {
                    let len = rng.random_range(0..=6usize);
                    (0..len).map(|_| rng.random_range(0..c)).collect()
                })
                .collect();
            let seq = pack(&blocks, c, &[], 6, c + 1).map_err(|e| e.to_string())?;
            let back = unpack(&seq, k).map_err(|e| e.to_string())?;
            if back != blocks {
                return Err(format!("trial {trial}: round trip changed the blocks"));
            }
        }

        // Perfect oracle: exactly zero.
        let seq = pack(&[vec![3, 1, 4], vec![1, 5, 9]], 100, &[], 6, 101)
            .map_err(|e| e.to_string())?;
        let oracle = OracleModel::new(&seq);
        let z = nll(&seq, &oracle).map_err(|e| e.to_string())?;
        if z != 0.0 {
            return Err(format!("oracle nll {z} != 0"));
        }

        // Uniform over vocab 16, body length 8 (power of two): exactly ln V.
        let vocab = 16u32;
        let seq =
            pack(&[vec![3, 1, 4], vec![1, 5, 9]], 15, &[], 6, vocab).map_err(|e| e.to_string())?;
        assert_eq!(seq.ids.len(), 8);
        let uniform = UniformModel { vocab };
        let got = nll(&seq, &uniform).map_err(|e| e.to_string())?;
        let expect = (vocab as f64).ln();
        if got != expect {
            return Err(format!("uniform nll {got} != ln V {expect}"));
        }
        Ok(())
    })();
    report(10, "pack/unpack round-trips; oracle nll is 0 and uniform nll is ln V", outcome);
}

#[test]
fn criterion_11_scorer_protocol() {
    let outcome = (|| {
        let run_cfg = RunConfig::default();
        let cfg = run_cfg.patch_config().map_err(|e| e.to_string())?;
        let clips = default_corpus();
        let grid = run_cfg.full_grid();
        let params = run_cfg.sampler_params().map_err(|e| e.to_string())?;
        for q in 0..cfg.k {
            let prefixes: Vec<Vec<usize>> = (0..clips.len())
                .map(|i| {
                    let mut rng = ChaCha8Rng::seed_from_u64(
                        atok_core::util::subseed(1111, "prefix", (q as u64) << 32 | i as u64),
                    );
                    sample_lengths(&mut rng, q, &params)
                })
                .collect();
            let table = predict_scores(
                &clips,
                q,
                &prefixes,
                &ScoreBackend::Exact,
                MetricKind::Mse,
                &grid,
                &cfg,
            )
            .map_err(|e| e.to_string())?;
            for s in 0..clips.len() {
                let row = table.row(s, 0);
                for (ci, w) in row.windows(2).enumerate() {
                    // The true sequence is non-increasing (dropped-energy
                    // accounting); the pixel-space evaluation reproduces it
                    // to ~1e-14 relative, so allow the double rounding
                    // floor and nothing more.
                    let floor = w[0].abs() * 1e-12 + 1e-18;
                    if w[1] > w[0] + floor {
                        return Err(format!(
                            "clip {s} block {q}: score rose {} -> {} at grid index {ci}",
                            w[0], w[1]
                        ));
                    }
                }
            }
            let loss = score_loss(&table, &table).map_err(|e| e.to_string())?;
            if loss != 0.0 {
                return Err(format!("score_loss(exact, exact) = {loss}"));
            }
        }
        Ok(())
    })();
    report(11, "exact MSE scores are non-increasing along the grid; self-loss is 0", outcome);
}

#[test]
fn criterion_12_noise_robustness_curve() {
    let outcome = (|| {
        let run_cfg = RunConfig::default();
        let clips = default_corpus();
        let rep = noise_robustness(
            &clips,
            &run_cfg,
            MetricKind::Mse,
            8,
            &[0.0, 0.05, 0.1, 0.2],
            20,
            CORPUS_SEED,
            1212,
        )
        .map_err(|e| e.to_string())?;
        // The report is always emitted, violations flagged in-band.
        let dir = std::env::temp_dir().join("atok-acceptance");
        std::fs::create_dir_all(&dir).map_err(|e| e.to_string())?;
        let path = dir.join("robustness.csv");
        let mut f = std::fs::File::create(&path).map_err(|e| e.to_string())?;
        rep.write_csv(&mut f).map_err(|e| e.to_string())?;
        println!("            robustness report written to {}", path.display());
        for row in &rep.rows {
            println!(
                "            sigma {:>5}: distortion {:.9} over {} seed(s){}",
                row.sigma,
                row.mean_distortion,
                row.seeds,
                if row.violation { "  [violation]" } else { "" }
            );
        }
        if !rep.monotone {
            return Err("distortion decreased at some noise level".to_string());
        }
        Ok(())
    })();
    report(12, "ILP distortion is non-decreasing in scorer noise (report emitted)", outcome);
}
