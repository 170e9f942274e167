//! Video clip container and the binary clip file format.
//!
//! Clips hold `T x H x W x C` samples in frame-major order. Raw input clips
//! live in `[0, 1]`; reconstructions produced by the codec are not clamped
//! and may step outside that range, so only finiteness is enforced on them.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

/// Magic bytes of the clip file format.
pub const CLIP_MAGIC: &[u8; 8] = b"ATOKVID1";

/// A real-valued video clip, frame-major: index `((t*H + y)*W + x)*C + ch`.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoClip {
    pub t: usize,
    pub h: usize,
    pub w: usize,
    pub c: usize,
    pub data: Vec<f64>,
    /// Informational only; never affects any computation.
    pub frame_rate: Option<f64>,
}

impl VideoClip {
    /// Construct a raw input clip. Values must be finite and in `[0, 1]`.
    pub fn new(t: usize, h: usize, w: usize, c: usize, data: Vec<f64>) -> Result<Self> {
        let clip = Self::from_reconstruction(t, h, w, c, data)?;
        for (i, &v) in clip.data.iter().enumerate() {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::InvalidParam(format!(
                    "clip value {v} at flat index {i} outside [0, 1]"
                )));
            }
        }
        Ok(clip)
    }

    /// Construct a clip without the `[0, 1]` range check (finite values only).
    /// Used for codec outputs, which are intentionally unclamped.
    pub fn from_reconstruction(
        t: usize,
        h: usize,
        w: usize,
        c: usize,
        data: Vec<f64>,
    ) -> Result<Self> {
        if t == 0 || h == 0 || w == 0 || c == 0 {
            return Err(Error::DimensionMismatch(format!(
                "clip dimensions must be positive, got {t}x{h}x{w}x{c}"
            )));
        }
        if data.len() != t * h * w * c {
            return Err(Error::DimensionMismatch(format!(
                "clip {t}x{h}x{w}x{c} needs {} values, got {}",
                t * h * w * c,
                data.len()
            )));
        }
        if let Some(v) = data.iter().find(|v| !v.is_finite()) {
            return Err(Error::InvalidParam(format!("non-finite clip value {v}")));
        }
        Ok(VideoClip { t, h, w, c, data, frame_rate: None })
    }

    pub fn zeros(t: usize, h: usize, w: usize, c: usize) -> Self {
        VideoClip { t, h, w, c, data: vec![0.0; t * h * w * c], frame_rate: None }
    }

    pub fn dims(&self) -> (usize, usize, usize, usize) {
        (self.t, self.h, self.w, self.c)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn index(&self, t: usize, y: usize, x: usize, ch: usize) -> usize {
        ((t * self.h + y) * self.w + x) * self.c + ch
    }

    #[inline]
    pub fn at(&self, t: usize, y: usize, x: usize, ch: usize) -> f64 {
        self.data[self.index(t, y, x, ch)]
    }

    #[inline]
    pub fn set(&mut self, t: usize, y: usize, x: usize, ch: usize, v: f64) {
        let i = self.index(t, y, x, ch);
        self.data[i] = v;
    }

    /// Copy of the frame span `[t0, t1)` as its own clip.
    pub fn frame_range(&self, t0: usize, t1: usize) -> Result<VideoClip> {
        if t0 > t1 || t1 > self.t {
            return Err(Error::IndexOutOfRange { what: "frame", index: t1, limit: self.t });
        }
        let per_frame = self.h * self.w * self.c;
        let data = self.data[t0 * per_frame..t1 * per_frame].to_vec();
        Ok(VideoClip {
            t: t1 - t0,
            h: self.h,
            w: self.w,
            c: self.c,
            data,
            frame_rate: self.frame_rate,
        })
    }

    /// True when every frame equals frame 0.
    pub fn is_temporally_constant(&self) -> bool {
        let per_frame = self.h * self.w * self.c;
        let first = &self.data[..per_frame];
        self.data.chunks_exact(per_frame).all(|f| f == first)
    }

    fn same_dims(&self, other: &VideoClip) -> Result<()> {
        if self.dims() != other.dims() {
            return Err(Error::DimensionMismatch(format!(
                "clip dims {:?} vs {:?}",
                self.dims(),
                other.dims()
            )));
        }
        Ok(())
    }

    /// Check dims match, for metric-style pairwise operations.
    pub fn check_same_dims(&self, other: &VideoClip) -> Result<()> {
        self.same_dims(other)
    }

    pub fn write_to(&self, path: &Path) -> Result<()> {
        let mut out = BufWriter::new(File::create(path)?);
        out.write_all(CLIP_MAGIC)?;
        for v in [self.t, self.h, self.w, self.c] {
            out.write_all(&(v as u32).to_le_bytes())?;
        }
        for &v in &self.data {
            out.write_all(&(v as f32).to_le_bytes())?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn read_from(path: &Path) -> Result<VideoClip> {
        let mut rd = BufReader::new(File::open(path)?);
        let mut magic = [0u8; 8];
        rd.read_exact(&mut magic)?;
        if &magic != CLIP_MAGIC {
            return Err(Error::Format(format!(
                "{} is not a clip file (bad magic)",
                path.display()
            )));
        }
        let mut u32buf = [0u8; 4];
        let mut dims = [0usize; 4];
        for d in dims.iter_mut() {
            rd.read_exact(&mut u32buf)?;
            *d = u32::from_le_bytes(u32buf) as usize;
        }
        let [t, h, w, c] = dims;
        let n = t
            .checked_mul(h)
            .and_then(|v| v.checked_mul(w))
            .and_then(|v| v.checked_mul(c))
            .ok_or_else(|| Error::Format("clip dimensions overflow".into()))?;
        let mut data = Vec::with_capacity(n);
        for _ in 0..n {
            rd.read_exact(&mut u32buf)?;
            data.push(f32::from_le_bytes(u32buf) as f64);
        }
        VideoClip::new(t, h, w, c, data)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_out_of_range_values() {
        assert!(VideoClip::new(1, 1, 1, 1, vec![1.5]).is_err());
        assert!(VideoClip::new(1, 1, 1, 1, vec![-0.1]).is_err());
        assert!(VideoClip::new(1, 1, 1, 1, vec![f64::NAN]).is_err());
        assert!(VideoClip::new(1, 1, 1, 1, vec![0.5]).is_ok());
    }

    #[test]
    fn reconstruction_constructor_allows_overshoot() {
        assert!(VideoClip::from_reconstruction(1, 1, 1, 1, vec![1.5]).is_ok());
        assert!(VideoClip::from_reconstruction(1, 1, 1, 1, vec![f64::INFINITY]).is_err());
    }

    #[test]
    fn frame_range_extracts_span() {
        let mut clip = VideoClip::zeros(4, 2, 2, 1);
        clip.set(2, 1, 1, 0, 0.25);
        let span = clip.frame_range(2, 4).unwrap();
        assert_eq!(span.t, 2);
        assert_eq!(span.at(0, 1, 1, 0), 0.25);
    }

    #[test]
    fn file_round_trip_preserves_f32_values() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("clip.bin");
        // Values chosen representable in f32 so the round trip is exact.
        let data: Vec<f64> = (0..16).map(|i| i as f64 / 16.0).collect();
        let clip = VideoClip::new(2, 2, 2, 2, data).unwrap();
        clip.write_to(&path).unwrap();
        let back = VideoClip::read_from(&path).unwrap();
        assert_eq!(back.dims(), clip.dims());
        assert_eq!(back.data, clip.data);
    }

    #[test]
    fn read_rejects_bad_magic() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("junk.bin");
        std::fs::write(&path, b"NOTACLIPxxxx").unwrap();
        assert!(VideoClip::read_from(&path).is_err());
    }
}
