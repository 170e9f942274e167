//! Adaptive block-causal video tokenization testbed.
//!
//! Videos are split into spatio-temporal patches grouped into K temporal
//! blocks. A blockwise orthonormal codec with importance-ordered
//! coefficients stands in for a learned encoder/decoder, so that dropping
//! tail tokens has exactly computable distortion. On top of it sit
//! block-causal attention mask construction, a truncated-Gaussian length
//! sampler, stochastic vector quantization, quality scoring over candidate
//! token lengths, and four budget-constrained allocation strategies
//! (fixed, two binary searches, and an exact integer program solved by
//! dynamic programming). The pipeline module wires these into end-to-end
//! rate-distortion sweeps over a synthetic corpus.

pub mod allocator;
pub mod codec;
pub mod config;
pub mod corpus;
pub mod error;
pub mod masking;
pub mod metrics;
pub mod patchify;
pub mod pipeline;
pub mod quantizer;
pub mod scorer;
pub mod seqpack;
pub mod util;
pub mod video;

pub use error::{Error, Result};
