//! Flat key-value run configuration.
//!
//! The format is one `key = value` pair per line with `#` comments. Keys
//! mirror the hyperparameter names used in reports; unknown keys are
//! rejected so typos surface instead of silently taking defaults.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::masking::SamplerParams;
use crate::patchify::PatchConfig;
use crate::util::fnv1a;

/// Full run configuration with desk-scale defaults.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub patch_t: usize,
    pub patch_p: usize,
    pub blocks: usize,
    pub block_tokens: usize,
    pub min_tokens: usize,
    pub max_tokens: usize,
    pub sampler_mu: f64,
    pub sampler_sigma: f64,
    pub codebook_size: usize,
    pub codebook_dim: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            frames: 16,
            height: 32,
            width: 32,
            channels: 1,
            patch_t: 4,
            patch_p: 8,
            blocks: 4,
            block_tokens: 32,
            min_tokens: 2,
            max_tokens: 32,
            sampler_mu: 16.0,
            sampler_sigma: 8.0,
            codebook_size: 8192,
            codebook_dim: 16,
        }
    }
}

impl RunConfig {
    pub fn dims(&self) -> (usize, usize, usize, usize) {
        (self.frames, self.height, self.width, self.channels)
    }

    pub fn patch_config(&self) -> Result<PatchConfig> {
        let cfg = PatchConfig::new(self.patch_t, self.patch_p, self.blocks, self.block_tokens)?;
        cfg.patch_count(self.frames, self.height, self.width)?;
        Ok(cfg)
    }

    pub fn sampler_params(&self) -> Result<SamplerParams> {
        SamplerParams::new(self.sampler_mu, self.sampler_sigma, self.min_tokens, self.max_tokens)
    }

    /// Every integer length in `[min_tokens, block_tokens]`.
    pub fn full_grid(&self) -> Vec<usize> {
        self.strided_grid(1)
    }

    /// Every `stride`-th length from `min_tokens`, always ending at
    /// `block_tokens` so the full-quality candidate stays available.
    pub fn strided_grid(&self, stride: usize) -> Vec<usize> {
        let mut grid: Vec<usize> = (self.min_tokens..=self.block_tokens)
            .step_by(stride.max(1))
            .collect();
        if *grid.last().unwrap() != self.block_tokens {
            grid.push(self.block_tokens);
        }
        grid
    }

    pub fn validate(&self) -> Result<()> {
        self.patch_config()?;
        self.sampler_params()?;
        if self.max_tokens > self.block_tokens {
            return Err(Error::InvalidParam(format!(
                "max_tokens {} exceeds block_tokens {}",
                self.max_tokens, self.block_tokens
            )));
        }
        if self.codebook_size == 0 || self.codebook_dim == 0 {
            return Err(Error::InvalidParam("codebook dims must be positive".into()));
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "frames = {}", self.frames);
        let _ = writeln!(s, "height = {}", self.height);
        let _ = writeln!(s, "width = {}", self.width);
        let _ = writeln!(s, "channels = {}", self.channels);
        let _ = writeln!(s, "patch_t = {}", self.patch_t);
        let _ = writeln!(s, "patch_p = {}", self.patch_p);
        let _ = writeln!(s, "blocks = {}", self.blocks);
        let _ = writeln!(s, "block_tokens = {}", self.block_tokens);
        let _ = writeln!(s, "min_tokens = {}", self.min_tokens);
        let _ = writeln!(s, "max_tokens = {}", self.max_tokens);
        let _ = writeln!(s, "sampler_mu = {}", self.sampler_mu);
        let _ = writeln!(s, "sampler_sigma = {}", self.sampler_sigma);
        let _ = writeln!(s, "codebook_size = {}", self.codebook_size);
        let _ = writeln!(s, "codebook_dim = {}", self.codebook_dim);
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Format(format!("config line {}: expected 'key = value'", lineno + 1))
            })?;
            let key = key.trim();
            let value = value.trim();
            let parse_usize = || -> Result<usize> {
                value.parse().map_err(|e| {
                    Error::Format(format!("config line {}: {e}", lineno + 1))
                })
            };
            let parse_f64 = || -> Result<f64> {
                value.parse().map_err(|e| {
                    Error::Format(format!("config line {}: {e}", lineno + 1))
                })
            };
            match key {
                "frames" => cfg.frames = parse_usize()?,
                "height" => cfg.height = parse_usize()?,
                "width" => cfg.width = parse_usize()?,
                "channels" => cfg.channels = parse_usize()?,
                "patch_t" => cfg.patch_t = parse_usize()?,
                "patch_p" => cfg.patch_p = parse_usize()?,
                "blocks" => cfg.blocks = parse_usize()?,
                "block_tokens" => cfg.block_tokens = parse_usize()?,
                "min_tokens" => cfg.min_tokens = parse_usize()?,
                "max_tokens" => cfg.max_tokens = parse_usize()?,
                "sampler_mu" => cfg.sampler_mu = parse_f64()?,
                "sampler_sigma" => cfg.sampler_sigma = parse_f64()?,
                "codebook_size" => cfg.codebook_size = parse_usize()?,
                "codebook_dim" => cfg.codebook_dim = parse_usize()?,
                other => {
                    return Err(Error::Format(format!(
                        "config line {}: unknown key '{other}'",
                        lineno + 1
                    )))
                }
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_text(&text)
    }

    /// Stable hash of the canonical text form, for report metadata.
    pub fn hash(&self) -> u64 {
        fnv1a(self.to_text().as_bytes())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_is_valid_and_round_trips() {
        let cfg = RunConfig::default();
        cfg.validate().unwrap();
        let back = RunConfig::from_text(&cfg.to_text()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.hash(), cfg.hash());
    }

    #[test]
    fn default_patch_geometry() {
        let cfg = RunConfig::default();
        let pc = cfg.patch_config().unwrap();
        // 16 frames of 32x32 with 4x8x8 patches: 4 * 4 * 4 = 64 patches.
        assert_eq!(pc.patch_count(16, 32, 32).unwrap(), 64);
        assert_eq!(cfg.full_grid().len(), 31);
    }

    #[test]
    fn strided_grid_keeps_the_endpoint() {
        let cfg = RunConfig::default();
        // 2, 6, 10, ..., 30 plus the forced 32.
        let g = cfg.strided_grid(4);
        assert_eq!(g.first(), Some(&2));
        assert_eq!(g.last(), Some(&32));
        assert!(g.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(cfg.strided_grid(1), cfg.full_grid());
    }

    #[test]
    fn comments_and_overrides_parse() {
        let text = "# tiny run\nframes = 8\nblocks = 2  # fewer blocks\n";
        let cfg = RunConfig::from_text(text).unwrap();
        assert_eq!(cfg.frames, 8);
        assert_eq!(cfg.blocks, 2);
        assert_eq!(cfg.height, 32);
    }

    #[test]
    fn unknown_keys_and_bad_geometry_are_rejected() {
        assert!(RunConfig::from_text("patch_q = 3\n").is_err());
        // 12 frames with patch_t 4 gives 3 chunks, not divisible by 4 blocks.
        assert!(RunConfig::from_text("frames = 12\n").is_err());
        assert!(RunConfig::from_text("max_tokens = 64\n").is_err());
    }

    #[test]
    fn hash_tracks_content() {
        let a = RunConfig::default();
        let mut b = a.clone();
        b.block_tokens = 16;
        b.max_tokens = 16;
        assert_ne!(a.hash(), b.hash());
    }
}
