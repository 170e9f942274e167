//! Deterministic synthetic clip generation.
//!
//! Scene kinds stress different allocation behaviors: static scenes are
//! cheap after block 0, drifting gradients need steady refresh, moving
//! shapes concentrate energy in residuals, and scene cuts spike the
//! residual of whichever block straddles the cut.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::util::subseed;
use crate::video::VideoClip;

/// One scene kind with generation parameters.
#[derive(Debug, Clone, PartialEq)]
pub enum SceneKind {
    /// Spatial pattern repeated identically on every frame.
    Static,
    /// Smooth plane-wave pattern drifting over time.
    DriftingGradient,
    /// Bright squares moving over a dark background with wraparound.
    MovingShapes { count: usize, speed: f64 },
    /// Two unrelated static patterns switching at a frame position.
    SceneCut { position: usize },
}

impl SceneKind {
    pub fn name(&self) -> &'static str {
        match self {
            SceneKind::Static => "static",
            SceneKind::DriftingGradient => "gradient",
            SceneKind::MovingShapes { .. } => "shapes",
            SceneKind::SceneCut { .. } => "cut",
        }
    }
}

/// Synthetic corpus description.
#[derive(Debug, Clone)]
pub struct CorpusSpec {
    pub n_clips: usize,
    pub dims: (usize, usize, usize, usize),
    /// `(kind, weight)` pairs; weights need not be normalized.
    pub kinds: Vec<(SceneKind, f64)>,
    pub seed: u64,
}

impl CorpusSpec {
    /// The default heterogeneous mix over all four kinds.
    pub fn default_mix(n_clips: usize, dims: (usize, usize, usize, usize), seed: u64) -> Self {
        let cut = dims.0 / 2;
        CorpusSpec {
            n_clips,
            dims,
            kinds: vec![
                (SceneKind::Static, 1.0),
                (SceneKind::DriftingGradient, 1.0),
                (SceneKind::MovingShapes { count: 3, speed: 1.5 }, 1.0),
                (SceneKind::SceneCut { position: cut }, 1.0),
            ],
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (t, h, w, c) = self.dims;
        if self.n_clips == 0 {
            return Err(Error::InvalidParam("corpus needs at least one clip".into()));
        }
        if t == 0 || h == 0 || w == 0 || c == 0 {
            return Err(Error::InvalidParam(format!("bad clip dims {t}x{h}x{w}x{c}")));
        }
        if self.kinds.is_empty() {
            return Err(Error::InvalidParam("no scene kinds given".into()));
        }
        let mut total = 0.0;
        for (kind, weight) in &self.kinds {
            if weight.is_nan() || *weight < 0.0 {
                return Err(Error::InvalidParam(format!(
                    "negative weight for kind {}",
                    kind.name()
                )));
            }
            total += weight;
            if let SceneKind::SceneCut { position } = kind {
                if *position == 0 || *position >= t {
                    return Err(Error::InvalidParam(format!(
                        "scene cut at {position} outside (0, {t})"
                    )));
                }
            }
        }
        if total.is_nan() || total <= 0.0 {
            return Err(Error::InvalidParam("scene kind weights sum to zero".into()));
        }
        Ok(())
    }
}

fn smooth_pattern(h: usize, w: usize, c: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    // Sum of two plane waves well under one cycle per axis, so a handful of
    // low-order cosine coefficients represents the pattern almost exactly.
    let (f1x, f1y): (f64, f64) = (
        0.2 + rng.random::<f64>() * 0.5,
        0.2 + rng.random::<f64>() * 0.5,
    );
    let (f2x, f2y): (f64, f64) = (
        0.3 + rng.random::<f64>() * 0.7,
        0.3 + rng.random::<f64>() * 0.7,
    );
    let (p1, p2): (f64, f64) = (rng.random(), rng.random());
    let mut out = Vec::with_capacity(h * w * c);
    for y in 0..h {
        for x in 0..w {
            let u = x as f64 / w as f64;
            let v = y as f64 / h as f64;
            let val = 0.5
                + 0.25 * (std::f64::consts::TAU * (f1x * u + f1y * v + p1)).cos()
                + 0.15 * (std::f64::consts::TAU * (f2x * u + f2y * v + p2)).sin();
            for _ in 0..c {
                out.push(val.clamp(0.05, 0.95));
            }
        }
    }
    out
}

fn gen_static(dims: (usize, usize, usize, usize), rng: &mut ChaCha8Rng) -> VideoClip {
    let (t, h, w, c) = dims;
    let frame = smooth_pattern(h, w, c, rng);
    let mut data = Vec::with_capacity(t * frame.len());
    for _ in 0..t {
        data.extend_from_slice(&frame);
    }
    VideoClip::new(t, h, w, c, data).expect("generated values in range")
}

fn gen_gradient(dims: (usize, usize, usize, usize), rng: &mut ChaCha8Rng) -> VideoClip {
    let (t, h, w, c) = dims;
    let (fx, fy): (f64, f64) = (
        0.3 + rng.random::<f64>() * 0.6,
        0.3 + rng.random::<f64>() * 0.6,
    );
    let speed: f64 = 0.5 + rng.random::<f64>();
    let phase: f64 = rng.random();
    let mut data = Vec::with_capacity(t * h * w * c);
    for ti in 0..t {
        let drift = speed * ti as f64 / t as f64;
        for y in 0..h {
            for x in 0..w {
                let u = x as f64 / w as f64;
                let v = y as f64 / h as f64;
                let val = 0.5
                    + 0.45 * (std::f64::consts::TAU * (fx * u + fy * v + drift + phase)).cos();
                for _ in 0..c {
                    data.push(val.clamp(0.0, 1.0));
                }
            }
        }
    }
    VideoClip::new(t, h, w, c, data).expect("generated values in range")
}

fn gen_shapes(
    dims: (usize, usize, usize, usize),
    count: usize,
    speed: f64,
    rng: &mut ChaCha8Rng,
) -> VideoClip {
    let (t, h, w, c) = dims;
    let mut clip = VideoClip::zeros(t, h, w, c);
    for v in clip.data.iter_mut() {
        *v = 0.2;
    }
    struct Shape {
        x0: f64,
        y0: f64,
        dx: f64,
        dy: f64,
        size: usize,
        level: f64,
    }
    let shapes: Vec<Shape> = (0..count.max(1))
        .map(|_| Shape {
            x0: rng.random::<f64>() * w as f64,
            y0: rng.random::<f64>() * h as f64,
            dx: (rng.random::<f64>() - 0.5) * 2.0 * speed,
            dy: (rng.random::<f64>() - 0.5) * 2.0 * speed,
            size: 2 + rng.random_range(0..(h / 4).max(1)),
            level: 0.6 + 0.35 * rng.random::<f64>(),
        })
        .collect();
    for ti in 0..t {
        for shape in &shapes {
            let cx = (shape.x0 + shape.dx * ti as f64).rem_euclid(w as f64) as usize;
            let cy = (shape.y0 + shape.dy * ti as f64).rem_euclid(h as f64) as usize;
            for dy in 0..shape.size {
                for dx in 0..shape.size {
                    let y = (cy + dy) % h;
                    let x = (cx + dx) % w;
                    for ch in 0..c {
                        clip.set(ti, y, x, ch, shape.level);
                    }
                }
            }
        }
    }
    clip
}

fn gen_cut(
    dims: (usize, usize, usize, usize),
    position: usize,
    rng: &mut ChaCha8Rng,
) -> VideoClip {
    let (t, h, w, c) = dims;
    let before = smooth_pattern(h, w, c, rng);
    let after: Vec<f64> = smooth_pattern(h, w, c, rng)
        .into_iter()
        .map(|v| (1.0 - v).clamp(0.05, 0.95))
        .collect();
    let mut data = Vec::with_capacity(t * h * w * c);
    for ti in 0..t {
        data.extend_from_slice(if ti < position { &before } else { &after });
    }
    VideoClip::new(t, h, w, c, data).expect("generated values in range")
}

/// Generate the clip at a corpus index. Each clip draws from its own named
/// sub-seed, so generation order and parallelism cannot change content.
pub fn gen_clip(spec: &CorpusSpec, index: usize) -> Result<VideoClip> {
    spec.validate()?;
    if index >= spec.n_clips {
        return Err(Error::IndexOutOfRange { what: "clip", index, limit: spec.n_clips });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(subseed(spec.seed, "corpus-clip", index as u64));
    let total: f64 = spec.kinds.iter().map(|(_, w)| w).sum();
    let mut pick = rng.random::<f64>() * total;
    let mut chosen = &spec.kinds[spec.kinds.len() - 1].0;
    for (kind, weight) in &spec.kinds {
        if pick < *weight {
            chosen = kind;
            break;
        }
        pick -= weight;
    }
    Ok(match chosen {
        SceneKind::Static => gen_static(spec.dims, &mut rng),
        SceneKind::DriftingGradient => gen_gradient(spec.dims, &mut rng),
        SceneKind::MovingShapes { count, speed } => {
            gen_shapes(spec.dims, *count, *speed, &mut rng)
        }
        SceneKind::SceneCut { position } => gen_cut(spec.dims, *position, &mut rng),
    })
}

/// Generate the whole corpus in memory.
pub fn gen_corpus(spec: &CorpusSpec) -> Result<Vec<VideoClip>> {
    (0..spec.n_clips).map(|i| gen_clip(spec, i)).collect()
}

/// File name of clip `index` inside a corpus directory.
pub fn clip_file_name(index: usize) -> String {
    format!("clip_{index:04}.bin")
}

/// Generate and write the corpus as clip files; returns the paths.
pub fn write_corpus(spec: &CorpusSpec, dir: &Path) -> Result<Vec<PathBuf>> {
    spec.validate()?;
    std::fs::create_dir_all(dir)?;
    let mut paths = Vec::with_capacity(spec.n_clips);
    for i in 0..spec.n_clips {
        let clip = gen_clip(spec, i)?;
        let path = dir.join(clip_file_name(i));
        clip.write_to(&path)?;
        paths.push(path);
    }
    Ok(paths)
}

/// Load every clip file from a corpus directory, in index order.
pub fn read_corpus(dir: &Path) -> Result<Vec<VideoClip>> {
    let mut names: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .map(|n| n.starts_with("clip_") && n.ends_with(".bin"))
                .unwrap_or(false)
        })
        .collect();
    names.sort();
    if names.is_empty() {
        return Err(Error::Format(format!("no clip files in {}", dir.display())));
    }
    names.iter().map(|p| VideoClip::read_from(p)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::encode;
    use crate::patchify::PatchConfig;

    fn dims() -> (usize, usize, usize, usize) {
        (16, 32, 32, 1)
    }

    fn single_kind_spec(kind: SceneKind, seed: u64) -> CorpusSpec {
        CorpusSpec { n_clips: 1, dims: dims(), kinds: vec![(kind, 1.0)], seed }
    }

    #[test]
    fn static_scene_has_constant_frames() {
        let clip = gen_clip(&single_kind_spec(SceneKind::Static, 1), 0).unwrap();
        assert!(clip.is_temporally_constant());
    }

    #[test]
    fn same_seed_gives_byte_identical_files() {
        let dir = tempfile::tempdir().unwrap();
        let spec = CorpusSpec::default_mix(3, dims(), 42);
        let a_dir = dir.path().join("a");
        let b_dir = dir.path().join("b");
        write_corpus(&spec, &a_dir).unwrap();
        write_corpus(&spec, &b_dir).unwrap();
        for i in 0..3 {
            let a = std::fs::read(a_dir.join(clip_file_name(i))).unwrap();
            let b = std::fs::read(b_dir.join(clip_file_name(i))).unwrap();
            assert_eq!(a, b, "clip {i} differs between runs");
        }
    }

    #[test]
    fn moving_shapes_have_more_late_block_energy_than_static() {
        let cfg = PatchConfig::new(4, 8, 4, 32).unwrap();
        let shapes = gen_clip(
            &single_kind_spec(SceneKind::MovingShapes { count: 3, speed: 2.0 }, 7),
            0,
        )
        .unwrap();
        let still = gen_clip(&single_kind_spec(SceneKind::Static, 7), 0).unwrap();
        let energy_after_block0 = |clip: &VideoClip| -> f64 {
            let lat = encode(clip, &cfg).unwrap();
            (1..4)
                .map(|b| {
                    lat.blocks[b].iter().map(|v| v * v).sum::<f64>() + lat.tail_energy[b]
                })
                .sum()
        };
        let e_shapes = energy_after_block0(&shapes);
        let e_still = energy_after_block0(&still);
        assert!(
            e_shapes > e_still * 10.0,
            "shapes {e_shapes} vs static {e_still}"
        );
    }

    #[test]
    fn scene_cut_spikes_the_cut_block_residual() {
        let cfg = PatchConfig::new(4, 8, 4, 32).unwrap();
        let clip = gen_clip(&single_kind_spec(SceneKind::SceneCut { position: 8 }, 9), 0).unwrap();
        let lat = encode(&clip, &cfg).unwrap();
        let energy = |b: usize| -> f64 {
            lat.blocks[b].iter().map(|v| v * v).sum::<f64>() + lat.tail_energy[b]
        };
        // The cut lands at frame 8 = start of block 2.
        assert!(energy(2) > 10.0 * energy(1));
        assert!(energy(2) > 10.0 * energy(3));
    }

    #[test]
    fn corpus_round_trips_through_directory() {
        let dir = tempfile::tempdir().unwrap();
        let spec = CorpusSpec::default_mix(4, (8, 16, 16, 1), 5);
        write_corpus(&spec, dir.path()).unwrap();
        let clips = read_corpus(dir.path()).unwrap();
        assert_eq!(clips.len(), 4);
        for clip in &clips {
            assert_eq!(clip.dims(), (8, 16, 16, 1));
        }
    }

    #[test]
    fn spec_validation() {
        let mut spec = CorpusSpec::default_mix(4, dims(), 1);
        spec.kinds = vec![(SceneKind::Static, 0.0)];
        assert!(spec.validate().is_err());
        let bad_cut = CorpusSpec {
            n_clips: 1,
            dims: dims(),
            kinds: vec![(SceneKind::SceneCut { position: 16 }, 1.0)],
            seed: 0,
        };
        assert!(bad_cut.validate().is_err());
    }
}
