//! Transform-averaged anomaly scores.
//!
//! The score of a sample is the mean over a set of dihedral transforms of
//! the negative log-likelihood of its normalized features under the flow.
//! `PriorOnly` scores with the latent prior alone; `FullLikelihood` adds
//! the log-det term of the full change-of-variables density.

use std::f64::consts::PI;

use crate::dataset::{dihedral_transforms, Dataset, RawImage, Sample, Split};
use crate::error::{Error, Result};
use crate::features::{extract, Normalizer};
use crate::flow::{FlowModel, Workspace};
use crate::fmt_g9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScoreMode {
    /// Negative log-density of the latent alone: (d/2)ln(2pi) + ||z||^2/2.
    PriorOnly,
    /// Full negative log-likelihood: prior term minus log-det.
    FullLikelihood,
}

impl ScoreMode {
    pub fn as_str(self) -> &'static str {
        match self {
            ScoreMode::PriorOnly => "prior_only",
            ScoreMode::FullLikelihood => "full_likelihood",
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        match text {
            "prior_only" => Ok(ScoreMode::PriorOnly),
            "full_likelihood" => Ok(ScoreMode::FullLikelihood),
            other => Err(Error::invalid(format!(
                "unknown score mode '{other}' (expected prior_only or full_likelihood)"
            ))),
        }
    }
}

/// Anomaly scores of one scoring pass over a sample collection.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreTable {
    /// (sample id, score), in source order.
    pub entries: Vec<(u64, f64)>,
    /// Training epochs the scoring model had seen.
    pub model_epochs: u64,
    pub transform_count: usize,
}

impl ScoreTable {
    pub fn scores(&self) -> Vec<f64> {
        self.entries.iter().map(|(_, s)| *s).collect()
    }

    /// CSV export: header `id,score`, 9 significant digits.
    pub fn to_csv_string(&self) -> String {
        let mut out = String::from("id,score\n");
        for (id, score) in &self.entries {
            out.push_str(&format!("{id},{}\n", fmt_g9(*score)));
        }
        out
    }
}

/// Per-row NLLs of a `bsz x dim` batch under the chosen mode.
fn nll_rows(model: &FlowModel, x: &[f64], bsz: usize, mode: ScoreMode, ws: &mut Workspace) -> Vec<f64> {
    let d = model.dim;
    let c = 0.5 * d as f64 * (2.0 * PI).ln();
    model.forward_batch_into(x, bsz, ws);
    (0..bsz)
        .map(|b| {
            let zr = &ws.z[b * d..(b + 1) * d];
            let sq: f64 = zr.iter().map(|z| z * z).sum();
            match mode {
                ScoreMode::PriorOnly => c + 0.5 * sq,
                ScoreMode::FullLikelihood => c + 0.5 * sq - ws.logdet[b],
            }
        })
        .collect()
}

/// The per-transform NLLs of one image (the values whose mean is the
/// anomaly score).
pub fn transform_nlls(
    model: &FlowModel,
    norm: &Normalizer,
    image: &RawImage,
    count: usize,
    mode: ScoreMode,
) -> Result<Vec<f64>> {
    let variants = dihedral_transforms(image, count)?;
    let mut rows = Vec::with_capacity(count * model.dim);
    for v in &variants {
        let f = extract(v)?;
        if f.dim() != norm.dim() {
            return Err(Error::invalid(format!(
                "feature dim {} does not match normalizer dim {}",
                f.dim(),
                norm.dim()
            )));
        }
        if norm.dim() != model.dim {
            return Err(Error::invalid(format!(
                "normalizer dim {} does not match flow dim {}",
                norm.dim(),
                model.dim
            )));
        }
        rows.extend_from_slice(&norm.apply(&f).values);
    }
    let mut ws = Workspace::new();
    Ok(nll_rows(model, &rows, count, mode, &mut ws))
}

/// Transform-averaged anomaly score of one sample.
pub fn score_sample(
    model: &FlowModel,
    norm: &Normalizer,
    sample: &Sample,
    count: usize,
    mode: ScoreMode,
) -> Result<f64> {
    let nlls = transform_nlls(model, norm, &sample.image, count, mode)?;
    Ok(nlls.iter().sum::<f64>() / nlls.len() as f64)
}

/// Normalized features of every transform variant of every sample in one
/// split, flattened for repeated scoring passes. Images and transforms are
/// fixed per run, so the refinement loop builds this once.
#[derive(Debug, Clone)]
pub struct TransformFeatureCache {
    pub ids: Vec<u64>,
    pub count: usize,
    pub dim: usize,
    data: Vec<f64>,
}

impl TransformFeatureCache {
    pub fn build(dataset: &Dataset, split: Split, count: usize, norm: &Normalizer) -> Result<Self> {
        let mut ids = Vec::new();
        let mut data = Vec::new();
        let dim = norm.dim();
        for sample in dataset.split_samples(split) {
            ids.push(sample.id);
            let variants = dihedral_transforms(&sample.image, count)?;
            for v in &variants {
                let f = extract(v)?;
                if f.dim() != dim {
                    return Err(Error::invalid(format!(
                        "feature dim {} does not match normalizer dim {dim}",
                        f.dim()
                    )));
                }
                data.extend_from_slice(&norm.apply(&f).values);
            }
        }
        if ids.is_empty() {
            return Err(Error::invalid(format!(
                "split {} is empty",
                split.as_str()
            )));
        }
        Ok(Self {
            ids,
            count,
            dim,
            data,
        })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// The `count x dim` feature rows of sample index `i`.
    pub fn rows(&self, i: usize) -> &[f64] {
        let span = self.count * self.dim;
        &self.data[i * span..(i + 1) * span]
    }
}

/// Score every cached sample; entry order matches the cache (dataset
/// order). Used by both the public dataset scoring and the refinement
/// loop (which scores a shrinking subset via `indices`).
pub fn score_cache_subset(
    model: &FlowModel,
    cache: &TransformFeatureCache,
    indices: &[usize],
    mode: ScoreMode,
    ws: &mut Workspace,
) -> Result<ScoreTable> {
    if indices.is_empty() {
        return Err(Error::invalid("nothing to score".to_string()));
    }
    if cache.dim != model.dim {
        return Err(Error::invalid(format!(
            "cached feature dim {} does not match flow dim {}",
            cache.dim, model.dim
        )));
    }
    let mut entries = Vec::with_capacity(indices.len());
    for &i in indices {
        let nlls = nll_rows(model, cache.rows(i), cache.count, mode, ws);
        let score = nlls.iter().sum::<f64>() / nlls.len() as f64;
        entries.push((cache.ids[i], score));
    }
    Ok(ScoreTable {
        entries,
        model_epochs: model.trained_epochs,
        transform_count: cache.count,
    })
}

/// Score one dataset split: one entry per sample, dataset order,
/// deterministic.
pub fn score_dataset(
    model: &FlowModel,
    norm: &Normalizer,
    dataset: &Dataset,
    split: Split,
    count: usize,
    mode: ScoreMode,
) -> Result<ScoreTable> {
    let cache = TransformFeatureCache::build(dataset, split, count, norm)?;
    let indices: Vec<usize> = (0..cache.len()).collect();
    let mut ws = Workspace::new();
    score_cache_subset(model, &cache, &indices, mode, &mut ws)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{self, DatasetConfig, Label};
    use crate::features::{fit_normalizer, FeatureVector};
    use crate::flow::init_flow;
    use crate::train::{train, TrainConfig};

    fn tiny_dataset(contamination: f64, seed: u64) -> Dataset {
        dataset::generate(
            &DatasetConfig {
                n_train: 40,
                n_test_normal: 15,
                n_test_anomalous: 15,
                contamination,
                ..DatasetConfig::default()
            },
            seed,
        )
        .unwrap()
    }

    fn fitted_normalizer(d: &Dataset) -> Normalizer {
        let feats: Vec<FeatureVector> = d
            .split_samples(Split::Train)
            .map(|s| extract(&s.image).unwrap())
            .collect();
        fit_normalizer(&feats).unwrap()
    }

    #[test]
    fn constant_image_all_transforms_agree() {
        let d = tiny_dataset(0.0, 3);
        let norm = fitted_normalizer(&d);
        let model = init_flow(36, 2, 8, 1.9, 5).unwrap();
        let img = RawImage::new(16, vec![0.5; 256]).unwrap();
        let sample = Sample {
            id: 0,
            image: img,
            true_label: Label::Normal,
            split: Split::Test,
        };
        let nlls = transform_nlls(&model, &norm, &sample.image, 8, ScoreMode::PriorOnly).unwrap();
        for pair in nlls.windows(2) {
            assert_eq!(pair[0], pair[1]);
        }
        // zero-init flow: score is (d/2)ln(2pi) + ||y_hat||^2/2
        let y_hat = norm.apply(&extract(&sample.image).unwrap());
        let expected = 0.5 * 36.0 * (2.0 * PI).ln()
            + 0.5 * y_hat.values.iter().map(|v| v * v).sum::<f64>();
        let score = score_sample(&model, &norm, &sample, 8, ScoreMode::PriorOnly).unwrap();
        assert!((score - expected).abs() < 1e-9);
    }

    #[test]
    fn count_one_is_single_nll() {
        let d = tiny_dataset(0.1, 4);
        let norm = fitted_normalizer(&d);
        let model = init_flow(36, 2, 8, 1.9, 6).unwrap();
        let sample = &d.samples[0];
        let single = score_sample(&model, &norm, sample, 1, ScoreMode::PriorOnly).unwrap();
        let nlls = transform_nlls(&model, &norm, &sample.image, 1, ScoreMode::PriorOnly).unwrap();
        assert_eq!(nlls.len(), 1);
        assert_eq!(single, nlls[0]);
    }

    #[test]
    fn score_is_mean_of_transform_nlls() {
        let d = tiny_dataset(0.1, 8);
        let norm = fitted_normalizer(&d);
        let mut model = init_flow(36, 3, 16, 1.9, 9).unwrap();
        let mut rng = crate::rng::Rng::new(12);
        model.for_each_param_mut(|p| *p += rng.range_f64(-0.3, 0.3));
        let sample = &d.samples[1];
        for count in [1usize, 4, 8] {
            let nlls =
                transform_nlls(&model, &norm, &sample.image, count, ScoreMode::PriorOnly).unwrap();
            let mean = nlls.iter().sum::<f64>() / count as f64;
            let score = score_sample(&model, &norm, sample, count, ScoreMode::PriorOnly).unwrap();
            assert!((score - mean).abs() < 1e-12);
        }
    }

    #[test]
    fn modes_differ_by_mean_negative_log_det() {
        let d = tiny_dataset(0.2, 5);
        let norm = fitted_normalizer(&d);
        let mut model = init_flow(36, 3, 16, 1.9, 7).unwrap();
        let mut rng = crate::rng::Rng::new(2);
        model.for_each_param_mut(|p| *p += rng.range_f64(-0.3, 0.3));
        let sample = &d.samples[2];
        let count = 4;
        let prior = score_sample(&model, &norm, sample, count, ScoreMode::PriorOnly).unwrap();
        let full = score_sample(&model, &norm, sample, count, ScoreMode::FullLikelihood).unwrap();
        // full - prior = mean over transforms of (-log_det)
        let variants = dihedral_transforms(&sample.image, count).unwrap();
        let mean_logdet: f64 = variants
            .iter()
            .map(|v| {
                let f = norm.apply(&extract(v).unwrap());
                model.forward(&f).unwrap().1
            })
            .sum::<f64>()
            / count as f64;
        assert!((full - prior + mean_logdet).abs() < 1e-9);
    }

    #[test]
    fn table_covers_split_in_order_and_is_pure() {
        let d = tiny_dataset(0.2, 6);
        let norm = fitted_normalizer(&d);
        let model = init_flow(36, 2, 8, 1.9, 3).unwrap();
        let t1 = score_dataset(&model, &norm, &d, Split::Test, 4, ScoreMode::PriorOnly).unwrap();
        let t2 = score_dataset(&model, &norm, &d, Split::Test, 4, ScoreMode::PriorOnly).unwrap();
        assert_eq!(t1, t2);
        let expected_ids: Vec<u64> = d.split_samples(Split::Test).map(|s| s.id).collect();
        let got_ids: Vec<u64> = t1.entries.iter().map(|(id, _)| *id).collect();
        assert_eq!(expected_ids, got_ids);
    }

    #[test]
    fn trained_model_separates_test_classes() {
        // end-to-end benchmark oracle at small scale, several seeds
        for seed in [1u64, 2, 3, 4, 5] {
            let d = tiny_dataset(0.0, seed);
            let norm = fitted_normalizer(&d);
            let feats: Vec<FeatureVector> = d
                .split_samples(Split::Train)
                .map(|s| norm.apply(&extract(&s.image).unwrap()))
                .collect();
            let model = init_flow(36, 4, 64, 1.9, seed).unwrap();
            let cfg = TrainConfig {
                budget: 40,
                seed,
                ..TrainConfig::default()
            };
            let (trained, _) = train(model, &feats, &cfg).unwrap();
            let table =
                score_dataset(&trained, &norm, &d, Split::Test, 8, ScoreMode::PriorOnly).unwrap();
            let mut normal = Vec::new();
            let mut anomalous = Vec::new();
            for ((id, score), sample) in table.entries.iter().zip(d.split_samples(Split::Test)) {
                assert_eq!(*id, sample.id);
                match sample.true_label {
                    Label::Normal => normal.push(*score),
                    Label::Anomalous => anomalous.push(*score),
                }
            }
            let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
            assert!(
                mean(&anomalous) > mean(&normal),
                "seed {seed}: anomalous mean {} <= normal mean {}",
                mean(&anomalous),
                mean(&normal)
            );
        }
    }

    #[test]
    fn prior_score_monotone_in_feature_norm() {
        // identity flow: score = const + ||y||^2/2, strictly increasing in
        // the norm of the normalized features
        let model = init_flow(6, 2, 8, 1.9, 1).unwrap();
        let mut ws = Workspace::new();
        let mut last = f64::NEG_INFINITY;
        for scale in [0.5, 1.0, 2.0, 4.0] {
            let row: Vec<f64> = (0..6).map(|i| scale * (i as f64 + 1.0) / 6.0).collect();
            let nll = nll_rows(&model, &row, 1, ScoreMode::PriorOnly, &mut ws)[0];
            assert!(nll > last);
            last = nll;
        }
    }

    #[test]
    fn dimension_mismatch_is_error() {
        let d = tiny_dataset(0.1, 2);
        let norm = fitted_normalizer(&d); // 36-dim
        let model = init_flow(10, 2, 8, 1.9, 1).unwrap();
        assert!(score_sample(&model, &norm, &d.samples[0], 4, ScoreMode::PriorOnly).is_err());
    }

    #[test]
    fn csv_export_shape() {
        let table = ScoreTable {
            entries: vec![(0, 1.25), (3, -0.5)],
            model_epochs: 10,
            transform_count: 4,
        };
        let csv = table.to_csv_string();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "id,score");
        assert_eq!(lines.len(), 3);
        assert!(lines[1].starts_with("0,"));
    }
}
