//! Frozen multi-scale statistics feature extractor and the run-level
//! normalizer.
//!
//! The extractor is deterministic and never trained: per scale (full
//! resolution, then two 2x2 average-poolings) it emits the global mean,
//! std, min, max plus the four quadrant means and four quadrant stds,
//! 12 values per scale, 36 total at the default three scales. The
//! normalizer is fitted once on the initial train features and stays
//! frozen for the whole run, including every refinement cycle.

use crate::dataset::RawImage;
use crate::error::{Error, Result};

pub const NUM_SCALES: usize = 3;
pub const FEATURES_PER_SCALE: usize = 12;
pub const FEATURE_DIM: usize = NUM_SCALES * FEATURES_PER_SCALE;

/// Variance floor for normalizer standard deviations.
pub const STD_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    pub values: Vec<f64>,
}

impl FeatureVector {
    pub fn dim(&self) -> usize {
        self.values.len()
    }
}

/// Per-coordinate affine normalizer, fitted once and then immutable.
#[derive(Debug, Clone, PartialEq)]
pub struct Normalizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

/// Population mean and std (two-pass). Constant inputs short-circuit to an
/// exactly zero std.
fn mean_std(vals: &[f64]) -> (f64, f64) {
    let first = vals[0];
    if vals.iter().all(|&v| v == first) {
        return (first, 0.0);
    }
    let n = vals.len() as f64;
    let mean = vals.iter().sum::<f64>() / n;
    let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// 12 statistics of one square pixel buffer: mean, std, min, max, then the
/// four quadrant means (TL, TR, BL, BR) and the four quadrant stds.
fn scale_stats(pixels: &[f64], size: usize, out: &mut Vec<f64>) {
    let mut min = f64::INFINITY;
    let mut max = f64::NEG_INFINITY;
    for &p in pixels {
        min = min.min(p);
        max = max.max(p);
    }
    let (mean, std) = mean_std(pixels);
    out.push(mean);
    out.push(std);
    out.push(min);
    out.push(max);

    let half = size / 2;
    let mut quad = Vec::with_capacity(half * half);
    let mut quad_means = [0.0; 4];
    let mut quad_stds = [0.0; 4];
    for (q, (r0, c0)) in [(0, 0), (0, half), (half, 0), (half, half)]
        .into_iter()
        .enumerate()
    {
        quad.clear();
        for r in r0..r0 + half {
            quad.extend_from_slice(&pixels[r * size + c0..r * size + c0 + half]);
        }
        let (m, s) = mean_std(&quad);
        quad_means[q] = m;
        quad_stds[q] = s;
    }
    out.extend_from_slice(&quad_means);
    out.extend_from_slice(&quad_stds);
}

/// 2x2 average pooling; halves the side length.
fn pool2(pixels: &[f64], size: usize) -> Vec<f64> {
    let half = size / 2;
    let mut out = Vec::with_capacity(half * half);
    for r in 0..half {
        for c in 0..half {
            let top = 2 * r * size + 2 * c;
            let bottom = top + size;
            out.push(0.25 * (pixels[top] + pixels[top + 1] + pixels[bottom] + pixels[bottom + 1]));
        }
    }
    out
}

/// Extract the 36-dimensional feature vector of an image. Purely
/// deterministic; repeated calls agree bitwise.
pub fn extract(image: &RawImage) -> Result<FeatureVector> {
    let size = image.size();
    if size % 4 != 0 {
        return Err(Error::invalid(format!(
            "image size {size} not divisible by 4"
        )));
    }
    if (size / 4) % 2 != 0 {
        return Err(Error::invalid(format!(
            "image size {size} too small for quadrant statistics at three scales"
        )));
    }

    let mut values = Vec::with_capacity(FEATURE_DIM);
    scale_stats(image.pixels(), size, &mut values);
    let half = pool2(image.pixels(), size);
    scale_stats(&half, size / 2, &mut values);
    let quarter = pool2(&half, size / 2);
    scale_stats(&quarter, size / 4, &mut values);
    Ok(FeatureVector { values })
}

/// Fit per-coordinate mean/std over a feature list; stds are floored at
/// [`STD_FLOOR`]. Requires at least 2 vectors.
pub fn fit_normalizer(features: &[FeatureVector]) -> Result<Normalizer> {
    if features.len() < 2 {
        return Err(Error::invalid(format!(
            "normalizer needs at least 2 feature vectors, got {}",
            features.len()
        )));
    }
    let dim = features[0].dim();
    if features.iter().any(|f| f.dim() != dim) {
        return Err(Error::invalid("feature dimensions differ".to_string()));
    }
    let n = features.len() as f64;
    let mut mean = vec![0.0; dim];
    let mut std = vec![0.0; dim];
    for f in features {
        for (m, v) in mean.iter_mut().zip(&f.values) {
            *m += v;
        }
    }
    for m in mean.iter_mut() {
        *m /= n;
    }
    for f in features {
        for (s, (v, m)) in std.iter_mut().zip(f.values.iter().zip(&mean)) {
            let d = v - m;
            *s += d * d;
        }
    }
    for s in std.iter_mut() {
        *s = (*s / n).sqrt().max(STD_FLOOR);
    }
    Ok(Normalizer { mean, std })
}

impl Normalizer {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Elementwise (value - mean) / std.
    pub fn apply(&self, f: &FeatureVector) -> FeatureVector {
        debug_assert_eq!(f.dim(), self.dim());
        let values = f
            .values
            .iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(v, (m, s))| (v - m) / s)
            .collect();
        FeatureVector { values }
    }
}
