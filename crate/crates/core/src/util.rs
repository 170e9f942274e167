//! Small shared helpers: a dense row-major matrix, compensated summation,
//! and deterministic sub-seed derivation.

use crate::error::{Error, Result};

/// Dense row-major `f64` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Mat {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::ShapeMismatch(format!(
                "matrix {rows}x{cols} needs {} values, got {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(Mat { rows, cols, data })
    }

    #[inline]
    pub fn at(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }
}

/// Neumaier-compensated sum. Keeps long metric accumulations at ~1 ulp.
pub fn compensated_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut sum = 0.0f64;
    let mut comp = 0.0f64;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

/// FNV-1a over a byte string.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h = 0xcbf29ce484222325u64;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e3779b97f4a7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d049bb133111eb);
    x ^ (x >> 31)
}

/// Derive a named sub-seed so parallel work items get independent, stable
/// random streams regardless of scheduling.
pub fn subseed(base: u64, tag: &str, index: u64) -> u64 {
    splitmix64(base ^ fnv1a(tag.as_bytes()).wrapping_add(index.wrapping_mul(0x9e3779b97f4a7c15)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mat_indexing_round_trips() {
        let mut m = Mat::zeros(3, 4);
        m.set(2, 1, 7.5);
        assert_eq!(m.at(2, 1), 7.5);
        assert_eq!(m.row(2)[1], 7.5);
    }

    #[test]
    fn mat_from_vec_checks_size() {
        assert!(Mat::from_vec(2, 2, vec![1.0; 3]).is_err());
        assert!(Mat::from_vec(2, 2, vec![1.0; 4]).is_ok());
    }

    #[test]
    fn compensated_sum_beats_naive_on_cancellation() {
        // 1 + 1e-16 repeated: naive summation drops every increment.
        let vals: Vec<f64> = std::iter::once(1.0)
            .chain(std::iter::repeat_n(1e-16, 1000))
            .collect();
        let s = compensated_sum(vals.iter().copied());
        assert!((s - (1.0 + 1000.0 * 1e-16)).abs() < 1e-18);
    }

    #[test]
    fn subseed_is_stable_and_tag_sensitive() {
        let a = subseed(42, "corpus", 3);
        let b = subseed(42, "corpus", 3);
        let c = subseed(42, "noise", 3);
        let d = subseed(42, "corpus", 4);
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_ne!(a, d);
    }
}
