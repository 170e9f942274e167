//! Quality metrics used as scoring targets and evaluation outputs.
//!
//! MSE and the perceptual proxy are lower-is-better; PSNR and SSIM are
//! higher-is-better and get negated when used as scores so that every
//! consumer (scorer, allocator) sees lower-is-better numbers uniformly.
//!
//! SSIM here is the single-scale variant with a uniform 8x8 window,
//! population (1/n) moments, constants k1 = 0.01 and k2 = 0.03 on a unit
//! dynamic range, computed per frame and channel and averaged. The
//! perceptual proxy is defined as the per-frame mean of half the MSE of
//! forward spatial gradients plus half the MSE of 4x4-block-averaged
//! frames; it is a deterministic stand-in for learned perceptual metrics
//! and is not comparable to them numerically.

use crate::error::{Error, Result};
use crate::util::compensated_sum;
use crate::video::VideoClip;

pub const SSIM_WINDOW: usize = 8;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;
/// MSE floor when converting PSNR to a finite score.
const PSNR_SCORE_MSE_FLOOR: f64 = 1e-15;

/// Metric selector with a stable wire name and an orientation flag.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MetricKind {
    Mse,
    Psnr,
    Ssim,
    PerceptualProxy,
}

impl MetricKind {
    pub const ALL: [MetricKind; 4] = [
        MetricKind::Mse,
        MetricKind::Psnr,
        MetricKind::Ssim,
        MetricKind::PerceptualProxy,
    ];

    /// Stable name used in CLI flags and CSV columns.
    pub fn name(&self) -> &'static str {
        match self {
            MetricKind::Mse => "mse",
            MetricKind::Psnr => "psnr",
            MetricKind::Ssim => "ssim",
            MetricKind::PerceptualProxy => "pproxy",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "mse" => Ok(MetricKind::Mse),
            "psnr" => Ok(MetricKind::Psnr),
            "ssim" => Ok(MetricKind::Ssim),
            "pproxy" => Ok(MetricKind::PerceptualProxy),
            other => Err(Error::InvalidParam(format!("unknown metric '{other}'"))),
        }
    }

    pub fn lower_is_better(&self) -> bool {
        matches!(self, MetricKind::Mse | MetricKind::PerceptualProxy)
    }

    /// Raw metric value in its native orientation.
    pub fn evaluate(&self, a: &VideoClip, b: &VideoClip) -> Result<f64> {
        match self {
            MetricKind::Mse => mse(a, b),
            MetricKind::Psnr => psnr(a, b, 1.0),
            MetricKind::Ssim => ssim(a, b),
            MetricKind::PerceptualProxy => perceptual_proxy(a, b),
        }
    }

    /// Lower-is-better score. PSNR of an exact reconstruction is clamped to
    /// a finite value so score tables stay finite.
    pub fn score(&self, a: &VideoClip, b: &VideoClip) -> Result<f64> {
        match self {
            MetricKind::Mse => mse(a, b),
            MetricKind::PerceptualProxy => perceptual_proxy(a, b),
            MetricKind::Psnr => {
                let e = mse(a, b)?.max(PSNR_SCORE_MSE_FLOOR);
                Ok(-10.0 * (1.0 / e).log10())
            }
            MetricKind::Ssim => Ok(-ssim(a, b)?),
        }
    }
}

/// Mean squared error over all elements.
pub fn mse(a: &VideoClip, b: &VideoClip) -> Result<f64> {
    a.check_same_dims(b)?;
    let sum = compensated_sum(
        a.data.iter().zip(&b.data).map(|(&x, &y)| (x - y) * (x - y)),
    );
    Ok(sum / a.len() as f64)
}

/// Peak signal-to-noise ratio, `10*log10(peak^2 / mse)`; `+inf` when the
/// clips are identical.
pub fn psnr(a: &VideoClip, b: &VideoClip, peak: f64) -> Result<f64> {
    let e = mse(a, b)?;
    if e == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (peak * peak / e).log10())
}

/// Mean absolute difference over all elements.
pub fn l1(a: &VideoClip, b: &VideoClip) -> Result<f64> {
    a.check_same_dims(b)?;
    let sum = compensated_sum(a.data.iter().zip(&b.data).map(|(&x, &y)| (x - y).abs()));
    Ok(sum / a.len() as f64)
}

/// Single-scale SSIM averaged over frames and channels.
pub fn ssim(a: &VideoClip, b: &VideoClip) -> Result<f64> {
    a.check_same_dims(b)?;
    let win = SSIM_WINDOW;
    if a.h < win || a.w < win {
        return Err(Error::DimensionMismatch(format!(
            "frames {}x{} smaller than the {win}x{win} SSIM window",
            a.h, a.w
        )));
    }
    let c1 = (SSIM_K1 * 1.0) * (SSIM_K1 * 1.0);
    let c2 = (SSIM_K2 * 1.0) * (SSIM_K2 * 1.0);
    let n = (win * win) as f64;
    let mut frame_vals = Vec::with_capacity(a.t * a.c);
    for t in 0..a.t {
        for ch in 0..a.c {
            let pa = plane(a, t, ch);
            let pb = plane(b, t, ch);
            let sa = SummedArea::build(&pa, a.h, a.w);
            let sb = SummedArea::build(&pb, a.h, a.w);
            let sa2 = SummedArea::build_sq(&pa, a.h, a.w);
            let sb2 = SummedArea::build_sq(&pb, a.h, a.w);
            let sab = SummedArea::build_prod(&pa, &pb, a.h, a.w);
            let mut acc = Vec::with_capacity((a.h - win + 1) * (a.w - win + 1));
            for y in 0..=(a.h - win) {
                for x in 0..=(a.w - win) {
                    let mu_a = sa.window(y, x, win) / n;
                    let mu_b = sb.window(y, x, win) / n;
                    let var_a = sa2.window(y, x, win) / n - mu_a * mu_a;
                    let var_b = sb2.window(y, x, win) / n - mu_b * mu_b;
                    let cov = sab.window(y, x, win) / n - mu_a * mu_b;
                    let num = (2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2);
                    let den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2);
                    acc.push(num / den);
                }
            }
            frame_vals.push(compensated_sum(acc.iter().copied()) / acc.len() as f64);
        }
    }
    Ok(compensated_sum(frame_vals.iter().copied()) / frame_vals.len() as f64)
}

/// Perceptual proxy: per frame, `0.5 * MSE(forward gradients) +
/// 0.5 * MSE(4x4 block means)`, averaged over frames.
pub fn perceptual_proxy(a: &VideoClip, b: &VideoClip) -> Result<f64> {
    a.check_same_dims(b)?;
    if a.h < 4 || a.w < 4 {
        return Err(Error::DimensionMismatch(format!(
            "frames {}x{} smaller than the 4x4 proxy block",
            a.h, a.w
        )));
    }
    let mut per_frame = Vec::with_capacity(a.t);
    for t in 0..a.t {
        let mut grad_terms = Vec::new();
        let mut block_terms = Vec::new();
        for ch in 0..a.c {
            let pa = plane(a, t, ch);
            let pb = plane(b, t, ch);
            gradient_sq_diffs(&pa, &pb, a.h, a.w, &mut grad_terms);
            block_mean_sq_diffs(&pa, &pb, a.h, a.w, &mut block_terms);
        }
        let grad_mse = compensated_sum(grad_terms.iter().copied()) / grad_terms.len() as f64;
        let block_mse = compensated_sum(block_terms.iter().copied()) / block_terms.len() as f64;
        per_frame.push(0.5 * grad_mse + 0.5 * block_mse);
    }
    Ok(compensated_sum(per_frame.iter().copied()) / per_frame.len() as f64)
}

fn plane(clip: &VideoClip, t: usize, ch: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(clip.h * clip.w);
    for y in 0..clip.h {
        for x in 0..clip.w {
            out.push(clip.at(t, y, x, ch));
        }
    }
    out
}

fn gradient_sq_diffs(pa: &[f64], pb: &[f64], h: usize, w: usize, out: &mut Vec<f64>) {
    // Horizontal forward differences.
    for y in 0..h {
        for x in 0..w - 1 {
            let ga = pa[y * w + x + 1] - pa[y * w + x];
            let gb = pb[y * w + x + 1] - pb[y * w + x];
            out.push((ga - gb) * (ga - gb));
        }
    }
    // Vertical forward differences.
    for y in 0..h - 1 {
        for x in 0..w {
            let ga = pa[(y + 1) * w + x] - pa[y * w + x];
            let gb = pb[(y + 1) * w + x] - pb[y * w + x];
            out.push((ga - gb) * (ga - gb));
        }
    }
}

fn block_mean_sq_diffs(pa: &[f64], pb: &[f64], h: usize, w: usize, out: &mut Vec<f64>) {
    for by in 0..h / 4 {
        for bx in 0..w / 4 {
            let mut ma = 0.0;
            let mut mb = 0.0;
            for dy in 0..4 {
                for dx in 0..4 {
                    ma += pa[(by * 4 + dy) * w + bx * 4 + dx];
                    mb += pb[(by * 4 + dy) * w + bx * 4 + dx];
                }
            }
            ma /= 16.0;
            mb /= 16.0;
            out.push((ma - mb) * (ma - mb));
        }
    }
}

struct SummedArea {
    // (h+1) x (w+1) inclusive prefix sums.
    sums: Vec<f64>,
    w1: usize,
}

impl SummedArea {
    fn build(plane: &[f64], h: usize, w: usize) -> Self {
        Self::build_with(h, w, |i| plane[i])
    }

    fn build_sq(plane: &[f64], h: usize, w: usize) -> Self {
        Self::build_with(h, w, |i| plane[i] * plane[i])
    }

    fn build_prod(pa: &[f64], pb: &[f64], h: usize, w: usize) -> Self {
        Self::build_with(h, w, |i| pa[i] * pb[i])
    }

    fn build_with(h: usize, w: usize, f: impl Fn(usize) -> f64) -> Self {
        let w1 = w + 1;
        let mut sums = vec![0.0f64; (h + 1) * w1];
        for y in 0..h {
            let mut row_acc = 0.0;
            for x in 0..w {
                row_acc += f(y * w + x);
                sums[(y + 1) * w1 + x + 1] = sums[y * w1 + x + 1] + row_acc;
            }
        }
        SummedArea { sums, w1 }
    }

    #[inline]
    fn window(&self, y: usize, x: usize, win: usize) -> f64 {
        let (y1, x1) = (y + win, x + win);
        self.sums[y1 * self.w1 + x1] - self.sums[y * self.w1 + x1] - self.sums[y1 * self.w1 + x]
            + self.sums[y * self.w1 + x]
    }
}
