//! Stochastic vector quantization over a fixed codebook.
//!
//! Each input row is compared to every code by cosine similarity; a softmax
//! over the similarities gives a categorical distribution that is either
//! sampled ([`svq_sample`]) or collapsed to its argmax ([`svq_argmax`]).
//! Codebooks are loaded from file or generated from a seeded unit-norm
//! random init; no learning happens here.
//!
//! Straight-through gradient contract: in a training system the codebook
//! lookup is treated as identity on the backward pass, i.e. gradients flow
//! to the pre-quantization vectors unchanged. Nothing at runtime depends on
//! this; it is recorded so integrations know what the sampled lookup
//! replaces.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::util::Mat;

/// Magic bytes of the codebook file format.
pub const CODEBOOK_MAGIC: &[u8; 8] = b"ATOKCBK1";

/// Norm guard for zero-norm rows; results are then effectively arbitrary.
const NORM_EPS: f64 = 1e-12;

/// Fixed codebook of `count` codes, each `dim` wide.
#[derive(Debug, Clone, PartialEq)]
pub struct Codebook {
    codes: Mat,
    /// Base id for special tokens appended after the codes.
    pub id_offset: u32,
}

impl Codebook {
    pub fn new(codes: Mat) -> Result<Self> {
        if codes.rows == 0 {
            return Err(Error::EmptyCodebook);
        }
        for r in 0..codes.rows {
            let norm: f64 = codes.row(r).iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm == 0.0 {
                return Err(Error::InvalidParam(format!("code {r} has zero norm")));
            }
        }
        let id_offset = codes.rows as u32;
        Ok(Codebook { codes, id_offset })
    }

    /// Seeded random init with unit-norm rows.
    pub fn random<R: Rng + ?Sized>(count: usize, dim: usize, rng: &mut R) -> Result<Self> {
        if count == 0 || dim == 0 {
            return Err(Error::EmptyCodebook);
        }
        let mut codes = Mat::zeros(count, dim);
        for r in 0..count {
            let row = codes.row_mut(r);
            loop {
                for v in row.iter_mut() {
                    *v = StandardNormal.sample(rng);
                }
                let norm: f64 = row.iter().map(|v| v * v).sum::<f64>().sqrt();
                if norm > NORM_EPS {
                    for v in row.iter_mut() {
                        *v /= norm;
                    }
                    break;
                }
            }
        }
        Codebook::new(codes)
    }

    pub fn count(&self) -> usize {
        self.codes.rows
    }

    pub fn dim(&self) -> usize {
        self.codes.cols
    }

    pub fn code(&self, index: usize) -> &[f64] {
        self.codes.row(index)
    }

    pub fn write_to(&self, path: &Path) -> Result<()> {
        let mut out = BufWriter::new(File::create(path)?);
        out.write_all(CODEBOOK_MAGIC)?;
        out.write_all(&(self.codes.rows as u32).to_le_bytes())?;
        out.write_all(&(self.codes.cols as u32).to_le_bytes())?;
        for &v in &self.codes.data {
            out.write_all(&(v as f32).to_le_bytes())?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn read_from(path: &Path) -> Result<Self> {
        let mut rd = BufReader::new(File::open(path)?);
        let mut magic = [0u8; 8];
        rd.read_exact(&mut magic)?;
        if &magic != CODEBOOK_MAGIC {
            return Err(Error::Format(format!(
                "{} is not a codebook file (bad magic)",
                path.display()
            )));
        }
        let mut buf = [0u8; 4];
        rd.read_exact(&mut buf)?;
        let count = u32::from_le_bytes(buf) as usize;
        rd.read_exact(&mut buf)?;
        let dim = u32::from_le_bytes(buf) as usize;
        let mut data = Vec::with_capacity(count * dim);
        for _ in 0..count * dim {
            rd.read_exact(&mut buf)?;
            data.push(f32::from_le_bytes(buf) as f64);
        }
        Codebook::new(Mat::from_vec(count, dim, data)?)
    }
}

/// Sampled (or argmaxed) indices with their looked-up code vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizerOutput {
    pub indices: Vec<usize>,
    pub vectors: Mat,
    /// Softmax rows retained for testing; `None` in argmax mode.
    pub probs: Option<Mat>,
}

fn guarded_norm(v: &[f64]) -> f64 {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    // Zero-norm guard only; similarities of a zero vector are all zero and
    // the resulting distribution is uniform.
    if n == 0.0 {
        NORM_EPS
    } else {
        n
    }
}

fn similarity_row(v: &[f64], book: &Codebook) -> Vec<f64> {
    let v_norm = guarded_norm(v);
    (0..book.count())
        .map(|i| {
            let code = book.code(i);
            let dot: f64 = v.iter().zip(code).map(|(a, b)| a * b).sum();
            dot / (v_norm * guarded_norm(code))
        })
        .collect()
}

fn softmax(logits: &[f64], temperature: f64) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&l| ((l - max) / temperature).exp()).collect();
    let denom: f64 = exps.iter().sum();
    exps.iter().map(|&e| e / denom).collect()
}

fn gather(book: &Codebook, indices: &[usize]) -> Mat {
    let mut vectors = Mat::zeros(indices.len(), book.dim());
    for (r, &idx) in indices.iter().enumerate() {
        vectors.row_mut(r).copy_from_slice(book.code(idx));
    }
    vectors
}

/// Sample a code index per input row from the cosine-similarity softmax at
/// temperature 1.
pub fn svq_sample<R: Rng + ?Sized>(
    v: &Mat,
    book: &Codebook,
    rng: &mut R,
) -> Result<QuantizerOutput> {
    svq_sample_with_temperature(v, book, 1.0, rng)
}

/// Sampling with an explicit softmax temperature.
pub fn svq_sample_with_temperature<R: Rng + ?Sized>(
    v: &Mat,
    book: &Codebook,
    temperature: f64,
    rng: &mut R,
) -> Result<QuantizerOutput> {
    check_input(v, book)?;
    if temperature.is_nan() || temperature <= 0.0 {
        return Err(Error::InvalidParam(format!("temperature {temperature} must be > 0")));
    }
    let mut indices = Vec::with_capacity(v.rows);
    let mut probs = Mat::zeros(v.rows, book.count());
    for r in 0..v.rows {
        let p = softmax(&similarity_row(v.row(r), book), temperature);
        // Inverse-CDF draw; the final index absorbs rounding slack.
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut picked = book.count() - 1;
        for (i, &pi) in p.iter().enumerate() {
            acc += pi;
            if u < acc {
                picked = i;
                break;
            }
        }
        indices.push(picked);
        probs.row_mut(r).copy_from_slice(&p);
    }
    let vectors = gather(book, &indices);
    Ok(QuantizerOutput { indices, vectors, probs: Some(probs) })
}

/// Deterministic mode: pick the highest cosine similarity, ties broken by
/// lowest index.
pub fn svq_argmax(v: &Mat, book: &Codebook) -> Result<QuantizerOutput> {
    check_input(v, book)?;
    let mut indices = Vec::with_capacity(v.rows);
    for r in 0..v.rows {
        let sims = similarity_row(v.row(r), book);
        let mut best = 0usize;
        for (i, &s) in sims.iter().enumerate() {
            if s > sims[best] {
                best = i;
            }
        }
        indices.push(best);
    }
    let vectors = gather(book, &indices);
    Ok(QuantizerOutput { indices, vectors, probs: None })
}

fn check_input(v: &Mat, book: &Codebook) -> Result<()> {
    if book.count() == 0 {
        return Err(Error::EmptyCodebook);
    }
    if v.cols != book.dim() {
        return Err(Error::ShapeMismatch(format!(
            "input width {} vs codebook width {}",
            v.cols,
            book.dim()
        )));
    }
    Ok(())
}
