//! Site-specific probing-codebook learning and mmWave beam alignment.
//!
//! The crate simulates downlink beam alignment for a single-RF-chain ULA
//! base station. A small probing codebook is swept first; a neural predictor
//! maps the measured powers to the best beam of a large narrow-beam DFT
//! codebook. Both the probing phases and the predictor are trained jointly,
//! and the result is benchmarked against exhaustive, hierarchical, and genie
//! baselines.
//!
//! Modules mirror the pipeline:
//! - [`channel`]: steering vectors, ray-sum channels, scene generation, BACD files
//! - [`codebooks`]: DFT and constant-modulus wide-beam codebooks, hierarchies
//! - [`learning`]: the trainable probing layer + MLP classifier and its training loop
//! - [`alignment`]: noisy beam sweeps and the five selection strategies
//! - [`metrics`]: accuracy, SNR, sweep/feedback complexity, silhouette

pub mod alignment;
pub mod channel;
pub mod codebooks;
pub mod error;
pub mod learning;
pub mod metrics;
pub mod rng;

pub(crate) mod format;
pub(crate) mod util;

pub use error::{Error, Result};
