//! Few-shot segmentation on precomputed backbone features.
//!
//! An episode pairs K support shots (two feature levels plus a binary
//! mask each) with one query. The pipeline computes pixel- and
//! region-level activation maps against the support foreground, runs a
//! small graph convolution over the salient query pixels with
//! support-derived kernels, cross-associates query and support
//! instances, and decodes everything into a query mask. All numerics
//! are plain `f64` on a reverse-mode tape; no GPU, no external ML
//! dependencies.

pub mod cli;
pub mod config;
pub mod episodes;
pub mod error;
pub mod gradcheck;
pub mod head;
pub mod ia;
pub mod io;
pub mod matching;
pub mod pipeline;
pub mod rng;
pub mod sigr;
pub mod tape;
pub mod tensor;

pub use error::{Error, Result};
