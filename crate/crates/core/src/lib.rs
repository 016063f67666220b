//! Robust anomaly detection on contaminated training data via iterative
//! sample refinement.
//!
//! The pipeline: synthetic surface images -> frozen multi-scale statistics
//! features -> affine-coupling normalizing flow trained by maximum
//! likelihood -> transform-averaged negative log-likelihood anomaly scores.
//! Training-set contamination is handled by the iterative refinement
//! process (IRP): pretrain, score the train split, remove the single worst
//! sample whose score exceeds a median-based dynamic threshold, retrain,
//! repeat until the epoch budget is spent. Baselines: vanilla training and
//! one-shot removal (OSR).
//!
//! Everything is deterministic given a seed; all file formats are plain
//! UTF-8 text with stable byte output.

pub mod cli;
pub mod config;
pub mod dataset;
pub mod error;
pub mod evaluation;
pub mod features;
pub mod flow;
pub mod refinement;
pub mod rng;
pub mod scoring;
pub mod train;

pub use error::{Error, Result};

/// Format a float with 9 significant digits (CSV convention).
///
/// Parsing such a string and re-rendering it is byte-stable, which the
/// report round-trip relies on.
pub fn fmt_g9(v: f64) -> String {
    format!("{v:.8e}")
}

/// Format a float with 17 significant digits (checkpoint/manifest
/// convention); parses back to the identical f64.
pub fn fmt_g17(v: f64) -> String {
    format!("{v:.16e}")
}
