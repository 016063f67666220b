//! The iterative refinement process (IRP) and its baselines.
//!
//! IRP: fit the normalizer on the initial train features, pretrain for N
//! epochs, then cycle { score the live train set, remove the single
//! highest-scoring sample if its score strictly exceeds
//! `threshold_multiplier` times the median, retrain R epochs } until the
//! total epoch budget is spent. Baselines: vanilla (no removal) and
//! one-shot removal (OSR: one filtering pass after pretraining, then
//! retrain with the remaining budget).
//!
//! Removals never shrink the train set below 50% of its initial size.

use crate::dataset::{Dataset, Split, TransformSpec};
use crate::error::{Error, Result};
use crate::features::{extract, fit_normalizer, FeatureVector, Normalizer};
use crate::flow::{init_flow, FlowModel, Workspace};
use crate::rng::derive_seed;
use crate::scoring::{score_cache_subset, ScoreMode, ScoreTable, TransformFeatureCache};
use crate::train::{FeatureMatrix, TrainConfig, TrainLog, Trainer};
use crate::fmt_g9;

const INIT_TAG: u64 = 0x696e_6974; // substream for model initialization

/// Refinement loop parameters. The epoch budget itself lives in
/// [`TrainConfig::budget`].
#[derive(Debug, Clone, PartialEq)]
pub struct RefinementConfig {
    pub pretrain_epochs: usize,
    pub epochs_per_cycle: usize,
    pub threshold_multiplier: f64,
    /// true: continue optimization across cycles; false: reinitialize
    /// model and optimizer before every retrain.
    pub warm_start: bool,
}

impl Default for RefinementConfig {
    fn default() -> Self {
        Self {
            pretrain_epochs: 30,
            epochs_per_cycle: 1,
            threshold_multiplier: 1.3,
            warm_start: true,
        }
    }
}

impl RefinementConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs_per_cycle == 0 {
            return Err(Error::invalid("epochs_per_cycle must be positive".to_string()));
        }
        if !(self.threshold_multiplier > 0.0) {
            return Err(Error::invalid(format!(
                "threshold_multiplier must be positive, got {}",
                self.threshold_multiplier
            )));
        }
        Ok(())
    }
}

/// One refinement decision: the thresholding outcome of a cycle and the
/// removal it produced, if any.
#[derive(Debug, Clone, PartialEq)]
pub struct RefinementEvent {
    pub cycle: u32,
    pub removed_id: Option<u64>,
    pub removed_score: Option<f64>,
    pub median: f64,
    pub threshold: f64,
    pub train_size_before: u32,
    pub train_size_after: u32,
}

/// Ordered record of every refinement decision plus the surviving ids.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RefinementLog {
    pub events: Vec<RefinementEvent>,
    pub final_train_ids: Vec<u64>,
}

impl RefinementLog {
    pub fn removal_count(&self) -> usize {
        self.events.iter().filter(|e| e.removed_id.is_some()).count()
    }

    pub fn removed_ids(&self) -> Vec<u64> {
        self.events.iter().filter_map(|e| e.removed_id).collect()
    }

    /// CSV export; removed fields are empty when the cycle removed nothing.
    pub fn to_csv_string(&self) -> String {
        let mut out = String::from(
            "cycle,removed_id,removed_score,median,threshold,train_size_before,train_size_after\n",
        );
        for e in &self.events {
            let id = e.removed_id.map(|i| i.to_string()).unwrap_or_default();
            let score = e.removed_score.map(fmt_g9).unwrap_or_default();
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                e.cycle,
                id,
                score,
                fmt_g9(e.median),
                fmt_g9(e.threshold),
                e.train_size_before,
                e.train_size_after
            ));
        }
        out
    }
}

/// Everything a training method produces: the model, the frozen
/// normalizer it scored with, and both logs (vanilla runs carry an empty
/// refinement log).
#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub model: FlowModel,
    pub normalizer: Normalizer,
    pub train_log: TrainLog,
    pub refinement_log: RefinementLog,
}

/// Middle order statistic; for even length the mean of the two middle
/// values.
pub fn median(scores: &[f64]) -> Result<f64> {
    if scores.is_empty() {
        return Err(Error::invalid("median of empty list".to_string()));
    }
    let mut sorted = scores.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    Ok(if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    })
}

/// The thresholding outcome over one score table.
#[derive(Debug, Clone, PartialEq)]
pub struct Decision {
    pub median: f64,
    pub threshold: f64,
    /// (id, score) of the single worst sample, present only when its score
    /// strictly exceeds the threshold. Ties break toward the smallest id.
    pub pick: Option<(u64, f64)>,
}

/// Algorithm step: the argmax is removed only if max > multiplier * median
/// (strict); at most one candidate per call.
pub fn select_outlier(table: &ScoreTable, multiplier: f64) -> Result<Decision> {
    if table.entries.is_empty() {
        return Err(Error::invalid("empty score table".to_string()));
    }
    let scores = table.scores();
    let med = median(&scores)?;
    let threshold = multiplier * med;
    let mut best: Option<(u64, f64)> = None;
    for &(id, score) in &table.entries {
        let better = match best {
            None => true,
            Some((bid, bscore)) => score > bscore || (score == bscore && id < bid),
        };
        if better {
            best = Some((id, score));
        }
    }
    let pick = best.filter(|&(_, score)| score > threshold);
    Ok(Decision {
        median: med,
        threshold,
        pick,
    })
}

/// OSR step: every sample whose score strictly exceeds the threshold,
/// highest scores first (ties toward the smallest id).
pub fn select_all_above(table: &ScoreTable, multiplier: f64) -> Result<(f64, f64, Vec<(u64, f64)>)> {
    if table.entries.is_empty() {
        return Err(Error::invalid("empty score table".to_string()));
    }
    let scores = table.scores();
    let med = median(&scores)?;
    let threshold = multiplier * med;
    let mut picks: Vec<(u64, f64)> = table
        .entries
        .iter()
        .copied()
        .filter(|&(_, s)| s > threshold)
        .collect();
    picks.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    Ok((med, threshold, picks))
}

/// Shared setup: train samples in dataset order, their raw features, the
/// frozen normalizer, and the normalized feature matrix used for training.
struct RunSetup {
    ids: Vec<u64>,
    feats: FeatureMatrix,
    normalizer: Normalizer,
}

fn prepare(dataset: &Dataset) -> Result<RunSetup> {
    let train: Vec<_> = dataset.split_samples(Split::Train).collect();
    if train.len() < 10 {
        return Err(Error::invalid(format!(
            "train split must hold at least 10 samples, got {}",
            train.len()
        )));
    }
    let raw: Vec<FeatureVector> = train
        .iter()
        .map(|s| extract(&s.image))
        .collect::<Result<_>>()?;
    let normalizer = fit_normalizer(&raw)?;
    let normalized: Vec<FeatureVector> = raw.iter().map(|f| normalizer.apply(f)).collect();
    Ok(RunSetup {
        ids: train.iter().map(|s| s.id).collect(),
        feats: FeatureMatrix::from_vectors(&normalized)?,
        normalizer,
    })
}

fn fresh_model(dim: usize, tc: &TrainConfig) -> Result<FlowModel> {
    init_flow(
        dim,
        tc.blocks,
        tc.hidden,
        tc.clamp_alpha,
        derive_seed(tc.seed, INIT_TAG),
    )
}

/// Plain training on the full (possibly contaminated) train split for the
/// whole epoch budget; no removals.
pub fn run_vanilla(dataset: &Dataset, tc: &TrainConfig) -> Result<TrainOutcome> {
    let setup = prepare(dataset)?;
    let model = fresh_model(setup.feats.dim, tc)?;
    let mut trainer = Trainer::new(model, &setup.feats, tc.lr, tc.batch, tc.seed)?;
    let live: Vec<usize> = (0..setup.feats.n).collect();
    trainer.run_epochs(&setup.feats, &live, tc.budget)?;
    let (model, train_log) = trainer.finish();
    Ok(TrainOutcome {
        model,
        normalizer: setup.normalizer,
        train_log,
        refinement_log: RefinementLog {
            events: Vec::new(),
            final_train_ids: setup.ids,
        },
    })
}

/// The iterative refinement process.
pub fn run_irp(
    dataset: &Dataset,
    rc: &RefinementConfig,
    tc: &TrainConfig,
    transforms: &TransformSpec,
    mode: ScoreMode,
) -> Result<TrainOutcome> {
    rc.validate()?;
    transforms.validate()?;
    if tc.budget < rc.pretrain_epochs {
        return Err(Error::invalid(format!(
            "epoch budget {} is smaller than pretraining {}",
            tc.budget, rc.pretrain_epochs
        )));
    }
    let setup = prepare(dataset)?;
    let n0 = setup.feats.n;
    let floor = n0 / 2;
    let cache = TransformFeatureCache::build(
        dataset,
        Split::Train,
        transforms.count_train,
        &setup.normalizer,
    )?;

    let model = fresh_model(setup.feats.dim, tc)?;
    let mut trainer = Trainer::new(model, &setup.feats, tc.lr, tc.batch, tc.seed)?;
    let mut live: Vec<usize> = (0..n0).collect();
    trainer.run_epochs(&setup.feats, &live, rc.pretrain_epochs)?;

    let cycles = (tc.budget - rc.pretrain_epochs) / rc.epochs_per_cycle;
    let leftover = (tc.budget - rc.pretrain_epochs) % rc.epochs_per_cycle;
    let mut events = Vec::with_capacity(cycles);
    let mut score_ws = Workspace::new();

    for cycle in 1..=cycles {
        let table = score_cache_subset(&trainer.model, &cache, &live, mode, &mut score_ws)?;
        let decision = select_outlier(&table, rc.threshold_multiplier)?;
        let before = live.len();
        let removed = match decision.pick {
            Some((id, score)) if live.len() > floor => {
                let pos = live
                    .iter()
                    .position(|&i| cache.ids[i] == id)
                    .expect("picked id is live");
                live.remove(pos);
                Some((id, score))
            }
            _ => None,
        };
        events.push(RefinementEvent {
            cycle: cycle as u32,
            removed_id: removed.map(|(id, _)| id),
            removed_score: removed.map(|(_, s)| s),
            median: decision.median,
            threshold: decision.threshold,
            train_size_before: before as u32,
            train_size_after: live.len() as u32,
        });
        if !rc.warm_start {
            trainer.reset_model(fresh_model(setup.feats.dim, tc)?);
        }
        trainer.run_epochs(&setup.feats, &live, rc.epochs_per_cycle)?;
    }
    if leftover > 0 {
        trainer.run_epochs(&setup.feats, &live, leftover)?;
    }

    let (model, train_log) = trainer.finish();
    Ok(TrainOutcome {
        model,
        normalizer: setup.normalizer,
        train_log,
        refinement_log: RefinementLog {
            events,
            final_train_ids: live.iter().map(|&i| setup.ids[i]).collect(),
        },
    })
}

/// One-shot removal baseline: pretrain, score once, drop everything above
/// the threshold in a single pass, retrain with the remaining budget. The
/// log holds one event per removed sample, all at cycle 1.
pub fn run_osr(
    dataset: &Dataset,
    rc: &RefinementConfig,
    tc: &TrainConfig,
    transforms: &TransformSpec,
    mode: ScoreMode,
) -> Result<TrainOutcome> {
    rc.validate()?;
    transforms.validate()?;
    if tc.budget < rc.pretrain_epochs {
        return Err(Error::invalid(format!(
            "epoch budget {} is smaller than pretraining {}",
            tc.budget, rc.pretrain_epochs
        )));
    }
    let setup = prepare(dataset)?;
    let n0 = setup.feats.n;
    let floor = n0 / 2;
    let cache = TransformFeatureCache::build(
        dataset,
        Split::Train,
        transforms.count_train,
        &setup.normalizer,
    )?;

    let model = fresh_model(setup.feats.dim, tc)?;
    let mut trainer = Trainer::new(model, &setup.feats, tc.lr, tc.batch, tc.seed)?;
    let mut live: Vec<usize> = (0..n0).collect();
    trainer.run_epochs(&setup.feats, &live, rc.pretrain_epochs)?;

    let mut score_ws = Workspace::new();
    let table = score_cache_subset(&trainer.model, &cache, &live, mode, &mut score_ws)?;
    let (med, threshold, picks) = select_all_above(&table, rc.threshold_multiplier)?;
    let mut events = Vec::new();
    for (id, score) in picks {
        if live.len() <= floor {
            break;
        }
        let pos = live
            .iter()
            .position(|&i| cache.ids[i] == id)
            .expect("picked id is live");
        live.remove(pos);
        events.push(RefinementEvent {
            cycle: 1,
            removed_id: Some(id),
            removed_score: Some(score),
            median: med,
            threshold,
            train_size_before: (live.len() + 1) as u32,
            train_size_after: live.len() as u32,
        });
    }
    trainer.run_epochs(&setup.feats, &live, tc.budget - rc.pretrain_epochs)?;

    let (model, train_log) = trainer.finish();
    Ok(TrainOutcome {
        model,
        normalizer: setup.normalizer,
        train_log,
        refinement_log: RefinementLog {
            events,
            final_train_ids: live.iter().map(|&i| setup.ids[i]).collect(),
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{self, DatasetConfig};
    use proptest::prelude::*;

    fn table(scores: &[f64]) -> ScoreTable {
        ScoreTable {
            entries: scores
                .iter()
                .enumerate()
                .map(|(i, &s)| (i as u64, s))
                .collect(),
            model_epochs: 0,
            transform_count: 1,
        }
    }

    fn small_cfg(n_train: usize, contamination: f64) -> DatasetConfig {
        DatasetConfig {
            n_train,
            n_test_normal: 8,
            n_test_anomalous: 8,
            contamination,
            ..DatasetConfig::default()
        }
    }

    fn fast_tc(budget: usize, seed: u64) -> TrainConfig {
        TrainConfig {
            blocks: 2,
            hidden: 16,
            budget,
            seed,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn median_examples() {
        assert_eq!(median(&[1.0, 2.0, 3.0]).unwrap(), 2.0);
        assert_eq!(median(&[1.0, 2.0, 3.0, 4.0]).unwrap(), 2.5);
        assert_eq!(median(&[5.0, 5.0, 5.0, 5.0]).unwrap(), 5.0);
        assert!(median(&[]).is_err());
    }

    #[test]
    fn select_outlier_removes_clear_outlier() {
        let t = table(&[1.0, 2.0, 3.0, 4.0, 100.0]);
        let d = select_outlier(&t, 3.0).unwrap();
        assert_eq!(d.median, 3.0);
        assert_eq!(d.threshold, 9.0);
        assert_eq!(d.pick, Some((4, 100.0)));
    }

    #[test]
    fn select_outlier_none_when_below_threshold() {
        let t = table(&[1.0, 2.0, 3.0, 4.0, 5.0]);
        let d = select_outlier(&t, 3.0).unwrap();
        assert_eq!(d.pick, None);
    }

    #[test]
    fn select_outlier_strict_at_boundary() {
        // max == threshold is not a removal
        let t = table(&[10.0, 10.0]);
        let d = select_outlier(&t, 1.0).unwrap();
        assert_eq!(d.threshold, 10.0);
        assert_eq!(d.pick, None);
    }

    #[test]
    fn select_outlier_median_times_multiplier_blocks_uniform_scores() {
        let t = table(&[5.0, 5.0, 5.0, 5.0]);
        let d = select_outlier(&t, 2.5).unwrap();
        assert_eq!(d.threshold, 12.5);
        assert_eq!(d.pick, None);
    }

    #[test]
    fn select_outlier_tie_breaks_to_smallest_id() {
        let t = ScoreTable {
            entries: vec![(7, 100.0), (3, 100.0), (1, 1.0), (2, 1.0), (9, 1.0)],
            model_epochs: 0,
            transform_count: 1,
        };
        let d = select_outlier(&t, 2.0).unwrap();
        assert_eq!(d.pick, Some((3, 100.0)));
    }

    #[test]
    fn select_all_above_takes_every_outlier() {
        let t = table(&[1.0, 2.0, 3.0, 4.0, 100.0, 90.0]);
        let (med, thr, picks) = select_all_above(&t, 3.0).unwrap();
        assert_eq!(med, 3.5);
        assert_eq!(thr, 10.5);
        assert_eq!(picks, vec![(4, 100.0), (5, 90.0)]);
    }

    #[test]
    fn irp_without_removals_equals_vanilla() {
        // clean data and a generous multiplier: no score ever crosses the
        // threshold, so the traces must coincide bitwise
        let d = dataset::generate(&small_cfg(30, 0.0), 11).unwrap();
        let tc = fast_tc(40, 11);
        let rc = RefinementConfig {
            pretrain_epochs: 10,
            epochs_per_cycle: 10,
            threshold_multiplier: 50.0,
            warm_start: true,
        };
        let irp = run_irp(&d, &rc, &tc, &TransformSpec::default(), ScoreMode::PriorOnly).unwrap();
        assert_eq!(irp.refinement_log.removal_count(), 0);
        let vanilla = run_vanilla(&d, &tc).unwrap();
        assert_eq!(irp.train_log, vanilla.train_log);
        assert_eq!(irp.model, vanilla.model);
    }

    #[test]
    fn vanilla_equals_irp_with_infinite_multiplier() {
        let d = dataset::generate(&small_cfg(24, 0.2), 5).unwrap();
        let tc = fast_tc(30, 5);
        let rc = RefinementConfig {
            pretrain_epochs: 10,
            epochs_per_cycle: 5,
            threshold_multiplier: f64::INFINITY,
            warm_start: true,
        };
        let irp = run_irp(&d, &rc, &tc, &TransformSpec::default(), ScoreMode::PriorOnly).unwrap();
        let vanilla = run_vanilla(&d, &tc).unwrap();
        assert_eq!(irp.refinement_log.removal_count(), 0);
        assert_eq!(irp.train_log.epoch_nll, vanilla.train_log.epoch_nll);
    }

    #[test]
    fn planted_saturated_defect_is_removed_first() {
        let mut d = dataset::generate(&small_cfg(30, 0.0), 13).unwrap();
        // plant one saturated image in the train split
        let plant_id = d.samples[4].id;
        d.samples[4].image = crate::dataset::RawImage::new(16, vec![1.0; 256]).unwrap();
        let tc = fast_tc(30, 13);
        let rc = RefinementConfig {
            pretrain_epochs: 10,
            epochs_per_cycle: 10,
            threshold_multiplier: 2.5,
            warm_start: true,
        };
        let out = run_irp(&d, &rc, &tc, &TransformSpec::default(), ScoreMode::PriorOnly).unwrap();
        let first = &out.refinement_log.events[0];
        assert_eq!(first.removed_id, Some(plant_id), "events: {:?}", out.refinement_log.events);
        assert!(first.removed_score.unwrap() > first.threshold);
    }

    #[test]
    fn removals_bounded_by_cycle_count() {
        let d = dataset::generate(&small_cfg(20, 0.5), 3).unwrap();
        let tc = fast_tc(50, 3);
        let rc = RefinementConfig {
            pretrain_epochs: 10,
            epochs_per_cycle: 10,
            threshold_multiplier: 0.5,
            warm_start: true,
        };
        let out = run_irp(&d, &rc, &tc, &TransformSpec::default(), ScoreMode::PriorOnly).unwrap();
        let cycles = (50 - 10) / 10;
        assert_eq!(out.refinement_log.events.len(), cycles);
        assert!(out.refinement_log.removal_count() <= cycles);
    }

    #[test]
    fn removal_floor_holds_at_half() {
        // aggressive multiplier tries to remove everything; the floor must
        // stop the shrinkage at 50% of the initial train size
        let d = dataset::generate(&small_cfg(12, 0.5), 7).unwrap();
        let tc = fast_tc(100, 7);
        let rc = RefinementConfig {
            pretrain_epochs: 10,
            epochs_per_cycle: 10,
            threshold_multiplier: 0.01,
            warm_start: true,
        };
        let out = run_irp(&d, &rc, &tc, &TransformSpec::default(), ScoreMode::PriorOnly).unwrap();
        assert!(out.refinement_log.final_train_ids.len() >= 6);
        let osr = run_osr(&d, &rc, &tc, &TransformSpec::default(), ScoreMode::PriorOnly).unwrap();
        assert!(osr.refinement_log.final_train_ids.len() >= 6);
    }

    #[test]
    fn events_respect_strict_threshold_and_shrinkage() {
        let d = dataset::generate(&small_cfg(30, 0.4), 19).unwrap();
        let tc = fast_tc(60, 19);
        let rc = RefinementConfig {
            pretrain_epochs: 10,
            epochs_per_cycle: 5,
            threshold_multiplier: 1.5,
            warm_start: true,
        };
        let out = run_irp(&d, &rc, &tc, &TransformSpec::default(), ScoreMode::PriorOnly).unwrap();
        let mut size = 30u32;
        for e in &out.refinement_log.events {
            assert_eq!(e.train_size_before, size);
            assert!((e.threshold - rc.threshold_multiplier * e.median).abs() < 1e-12);
            if let Some(score) = e.removed_score {
                assert!(score > e.threshold);
                assert_eq!(e.train_size_after, e.train_size_before - 1);
            } else {
                assert_eq!(e.train_size_after, e.train_size_before);
            }
            size = e.train_size_after;
        }
        assert_eq!(out.refinement_log.final_train_ids.len(), size as usize);
        // no id removed twice
        let mut removed = out.refinement_log.removed_ids();
        removed.sort_unstable();
        let before = removed.len();
        removed.dedup();
        assert_eq!(removed.len(), before);
    }

    #[test]
    fn replay_is_bitwise_deterministic() {
        let d = dataset::generate(&small_cfg(24, 0.3), 23).unwrap();
        let tc = fast_tc(40, 23);
        let rc = RefinementConfig {
            pretrain_epochs: 10,
            epochs_per_cycle: 5,
            threshold_multiplier: 2.0,
            warm_start: true,
        };
        let a = run_irp(&d, &rc, &tc, &TransformSpec::default(), ScoreMode::PriorOnly).unwrap();
        let b = run_irp(&d, &rc, &tc, &TransformSpec::default(), ScoreMode::PriorOnly).unwrap();
        assert_eq!(a.refinement_log, b.refinement_log);
        assert_eq!(a.train_log, b.train_log);
        assert_eq!(a.model, b.model);
    }

    #[test]
    fn cold_restart_differs_from_warm_start_after_removal() {
        let d = dataset::generate(&small_cfg(20, 0.4), 29).unwrap();
        let tc = fast_tc(40, 29);
        let warm = RefinementConfig {
            pretrain_epochs: 10,
            epochs_per_cycle: 10,
            threshold_multiplier: 1.2,
            warm_start: true,
        };
        let cold = RefinementConfig {
            warm_start: false,
            ..warm.clone()
        };
        let a = run_irp(&d, &warm, &tc, &TransformSpec::default(), ScoreMode::PriorOnly).unwrap();
        let b = run_irp(&d, &cold, &tc, &TransformSpec::default(), ScoreMode::PriorOnly).unwrap();
        assert_ne!(a.model, b.model);
    }

    #[test]
    fn osr_mass_removal_example() {
        let d = dataset::generate(&small_cfg(20, 0.5), 31).unwrap();
        let tc = fast_tc(30, 31);
        let rc = RefinementConfig {
            pretrain_epochs: 10,
            epochs_per_cycle: 10,
            threshold_multiplier: 1.2,
            warm_start: true,
        };
        let out = run_osr(&d, &rc, &tc, &TransformSpec::default(), ScoreMode::PriorOnly).unwrap();
        for e in &out.refinement_log.events {
            assert_eq!(e.cycle, 1);
            assert!(e.removed_score.unwrap() > e.threshold);
        }
    }

    #[test]
    fn osr_without_outliers_matches_vanilla_schedule() {
        let d = dataset::generate(&small_cfg(24, 0.0), 37).unwrap();
        let tc = fast_tc(30, 37);
        let rc = RefinementConfig {
            pretrain_epochs: 10,
            epochs_per_cycle: 10,
            threshold_multiplier: 50.0,
            warm_start: true,
        };
        let osr = run_osr(&d, &rc, &tc, &TransformSpec::default(), ScoreMode::PriorOnly).unwrap();
        assert_eq!(osr.refinement_log.events.len(), 0);
        let vanilla = run_vanilla(&d, &tc).unwrap();
        assert_eq!(osr.train_log.epoch_nll, vanilla.train_log.epoch_nll);
    }

    #[test]
    fn osr_removals_within_irp_cycle_bound_when_outliers_are_few() {
        // with few planted outliers, OSR's single pass removes no more
        // than IRP could across the same budget's cycles
        let d = dataset::generate(&small_cfg(30, 0.1), 41).unwrap();
        let tc = fast_tc(40, 41);
        let rc = RefinementConfig {
            pretrain_epochs: 10,
            epochs_per_cycle: 5,
            threshold_multiplier: 1.3,
            warm_start: true,
        };
        let cycles = (40 - 10) / 5;
        let osr = run_osr(&d, &rc, &tc, &TransformSpec::default(), ScoreMode::PriorOnly).unwrap();
        assert!(
            osr.refinement_log.removal_count() <= cycles,
            "OSR removed {} with only {} cycles of IRP budget",
            osr.refinement_log.removal_count(),
            cycles
        );
    }

    #[test]
    fn budget_below_pretrain_is_rejected() {
        let d = dataset::generate(&small_cfg(20, 0.1), 2).unwrap();
        let tc = fast_tc(5, 2);
        let rc = RefinementConfig::default(); // pretrain 30 > budget 5
        assert!(run_irp(&d, &rc, &tc, &TransformSpec::default(), ScoreMode::PriorOnly).is_err());
    }

    #[test]
    fn refinement_csv_shape() {
        let log = RefinementLog {
            events: vec![
                RefinementEvent {
                    cycle: 1,
                    removed_id: Some(4),
                    removed_score: Some(12.0),
                    median: 4.0,
                    threshold: 10.0,
                    train_size_before: 30,
                    train_size_after: 29,
                },
                RefinementEvent {
                    cycle: 2,
                    removed_id: None,
                    removed_score: None,
                    median: 4.0,
                    threshold: 10.0,
                    train_size_before: 29,
                    train_size_after: 29,
                },
            ],
            final_train_ids: vec![],
        };
        let csv = log.to_csv_string();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 3);
        assert!(lines[2].starts_with("2,,,"));
    }

    proptest! {
        /// Raising the multiplier can only shrink the set of firing
        /// decisions, holding the scores fixed.
        #[test]
        fn threshold_monotone_in_multiplier(
            scores in proptest::collection::vec(0.1f64..100.0, 3..40),
            t in 0.5f64..5.0,
            bump in 0.0f64..5.0,
        ) {
            let tab = table(&scores);
            let low = select_outlier(&tab, t).unwrap();
            let high = select_outlier(&tab, t + bump).unwrap();
            if let Some(pick) = high.pick {
                // anything that fires at the higher threshold fires at the
                // lower one, with the same argmax
                prop_assert_eq!(low.pick, Some(pick));
            }
        }

        #[test]
        fn every_pick_exceeds_threshold(
            scores in proptest::collection::vec(0.0f64..50.0, 2..30),
            t in 0.5f64..4.0,
        ) {
            let tab = table(&scores);
            let d = select_outlier(&tab, t).unwrap();
            if let Some((_, s)) = d.pick {
                prop_assert!(s > d.threshold);
            }
            let (_, thr, picks) = select_all_above(&tab, t).unwrap();
            for (_, s) in picks {
                prop_assert!(s > thr);
            }
        }
    }
}
