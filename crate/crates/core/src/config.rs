//! Flat `section.key = value` run configuration.
//!
//! `#` lines and blank lines are ignored, missing keys take the documented
//! defaults, duplicate and unknown keys are rejected with their line
//! number. One config fully determines a run together with its seed.

use crate::dataset::{DatasetConfig, TransformSpec};
use crate::error::{Error, Result};
use crate::evaluation::SweepConfig;
use crate::refinement::RefinementConfig;
use crate::scoring::ScoreMode;
use crate::train::TrainConfig;

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub out_dir: String,
    pub dataset: DatasetConfig,
    pub flow_blocks: usize,
    pub flow_hidden: usize,
    pub flow_clamp_alpha: f64,
    pub train_lr: f64,
    pub train_budget: usize,
    pub train_batch: usize,
    pub irp_pretrain: usize,
    pub irp_cycle_epochs: usize,
    pub irp_threshold_multiplier: f64,
    pub irp_warm_start: bool,
    pub score_mode: ScoreMode,
    pub score_count_train: usize,
    pub score_count_eval: usize,
    pub sweep_levels: Vec<u32>,
    pub sweep_seeds: Vec<u64>,
    pub sweep_workers: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            out_dir: "out".to_string(),
            dataset: DatasetConfig::default(),
            flow_blocks: crate::flow::DEFAULT_BLOCKS,
            flow_hidden: crate::flow::DEFAULT_HIDDEN,
            flow_clamp_alpha: crate::flow::DEFAULT_CLAMP_ALPHA,
            train_lr: 2e-4,
            train_budget: 200,
            train_batch: 32,
            irp_pretrain: 30,
            irp_cycle_epochs: 1,
            irp_threshold_multiplier: 1.3,
            irp_warm_start: true,
            score_mode: ScoreMode::PriorOnly,
            score_count_train: 4,
            score_count_eval: 8,
            sweep_levels: vec![0, 10, 20, 30, 40, 50],
            sweep_seeds: vec![1, 2, 3, 4, 5],
            sweep_workers: 1,
        }
    }
}

fn parse_value<T: std::str::FromStr>(key: &str, value: &str, line: usize) -> Result<T> {
    value.parse().map_err(|_| {
        Error::parse(line, format!("invalid value '{value}' for {key}"))
    })
}

fn parse_bool(key: &str, value: &str, line: usize) -> Result<bool> {
    match value {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(Error::parse(
            line,
            format!("invalid value '{value}' for {key} (expected true or false)"),
        )),
    }
}

fn parse_list<T: std::str::FromStr>(key: &str, value: &str, line: usize) -> Result<Vec<T>> {
    value
        .split(',')
        .map(|item| {
            item.trim()
                .parse()
                .map_err(|_| Error::parse(line, format!("invalid list entry '{item}' for {key}")))
        })
        .collect()
}

/// Parse a config text. Unknown keys, malformed values, and duplicate keys
/// are errors naming the offending line.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    let mut cfg = RunConfig::default();
    let mut seen = std::collections::HashSet::new();
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| Error::parse(line_no, format!("expected 'key = value', found '{line}'")))?;
        let key = key.trim();
        let value = value.trim();
        if !seen.insert(key.to_string()) {
            return Err(Error::parse(line_no, format!("duplicate key '{key}'")));
        }
        match key {
            "seed" => cfg.seed = parse_value(key, value, line_no)?,
            "out.dir" => cfg.out_dir = value.to_string(),
            "dataset.n_train" => cfg.dataset.n_train = parse_value(key, value, line_no)?,
            "dataset.n_test_normal" => {
                cfg.dataset.n_test_normal = parse_value(key, value, line_no)?
            }
            "dataset.n_test_anomalous" => {
                cfg.dataset.n_test_anomalous = parse_value(key, value, line_no)?
            }
            "dataset.image_size" => cfg.dataset.image_size = parse_value(key, value, line_no)?,
            "dataset.contamination" => {
                cfg.dataset.contamination = parse_value(key, value, line_no)?
            }
            "dataset.defect_intensity" => {
                cfg.dataset.defect_intensity = parse_value(key, value, line_no)?
            }
            "dataset.pixel_noise" => cfg.dataset.pixel_noise = parse_value(key, value, line_no)?,
            "flow.blocks" => cfg.flow_blocks = parse_value(key, value, line_no)?,
            "flow.hidden" => cfg.flow_hidden = parse_value(key, value, line_no)?,
            "flow.clamp_alpha" => cfg.flow_clamp_alpha = parse_value(key, value, line_no)?,
            "train.lr" => cfg.train_lr = parse_value(key, value, line_no)?,
            "train.budget" => cfg.train_budget = parse_value(key, value, line_no)?,
            "train.batch" => cfg.train_batch = parse_value(key, value, line_no)?,
            "irp.pretrain" => cfg.irp_pretrain = parse_value(key, value, line_no)?,
            "irp.cycle_epochs" => cfg.irp_cycle_epochs = parse_value(key, value, line_no)?,
            "irp.threshold_multiplier" => {
                cfg.irp_threshold_multiplier = parse_value(key, value, line_no)?
            }
            "irp.warm_start" => cfg.irp_warm_start = parse_bool(key, value, line_no)?,
            "score.mode" => {
                cfg.score_mode = ScoreMode::parse(value)
                    .map_err(|e| Error::parse(line_no, format!("{e}")))?
            }
            "score.count_train" => cfg.score_count_train = parse_value(key, value, line_no)?,
            "score.count_eval" => cfg.score_count_eval = parse_value(key, value, line_no)?,
            "sweep.levels" => cfg.sweep_levels = parse_list(key, value, line_no)?,
            "sweep.seeds" => cfg.sweep_seeds = parse_list(key, value, line_no)?,
            "sweep.workers" => cfg.sweep_workers = parse_value(key, value, line_no)?,
            other => {
                return Err(Error::parse(line_no, format!("unknown key '{other}'")));
            }
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

impl RunConfig {
    /// Cross-field validation against the module preconditions.
    pub fn validate(&self) -> Result<()> {
        let check = |ok: bool, msg: String| if ok { Ok(()) } else { Err(Error::invalid(msg)) };
        check(
            (0.0..=0.5).contains(&self.dataset.contamination),
            format!(
                "dataset.contamination must be within [0, 0.5], got {}",
                self.dataset.contamination
            ),
        )?;
        check(
            self.dataset.n_train >= 10,
            format!("dataset.n_train must be at least 10, got {}", self.dataset.n_train),
        )?;
        check(
            self.dataset.image_size >= 8 && self.dataset.image_size % 8 == 0,
            format!(
                "dataset.image_size must be a multiple of 8, got {}",
                self.dataset.image_size
            ),
        )?;
        check(
            self.dataset.defect_intensity > 0.0,
            format!(
                "dataset.defect_intensity must be positive, got {}",
                self.dataset.defect_intensity
            ),
        )?;
        check(
            self.dataset.pixel_noise >= 0.0,
            format!(
                "dataset.pixel_noise must be non-negative, got {}",
                self.dataset.pixel_noise
            ),
        )?;
        check(
            self.flow_blocks >= 1,
            format!("flow.blocks must be at least 1, got {}", self.flow_blocks),
        )?;
        check(
            self.flow_hidden >= 1,
            format!("flow.hidden must be at least 1, got {}", self.flow_hidden),
        )?;
        check(
            self.flow_clamp_alpha > 0.0,
            format!("flow.clamp_alpha must be positive, got {}", self.flow_clamp_alpha),
        )?;
        check(
            self.train_lr > 0.0 && self.train_lr.is_finite(),
            format!("train.lr must be positive, got {}", self.train_lr),
        )?;
        check(
            self.train_batch >= 1,
            format!("train.batch must be at least 1, got {}", self.train_batch),
        )?;
        check(
            self.irp_cycle_epochs >= 1,
            format!("irp.cycle_epochs must be at least 1, got {}", self.irp_cycle_epochs),
        )?;
        check(
            self.irp_threshold_multiplier > 0.0,
            format!(
                "irp.threshold_multiplier must be positive, got {}",
                self.irp_threshold_multiplier
            ),
        )?;
        check(
            self.irp_pretrain <= self.train_budget,
            format!(
                "irp.pretrain ({}) must not exceed train.budget ({})",
                self.irp_pretrain, self.train_budget
            ),
        )?;
        for (name, c) in [
            ("score.count_train", self.score_count_train),
            ("score.count_eval", self.score_count_eval),
        ] {
            check(
                (1..=8).contains(&c),
                format!("{name} must be within 1..=8, got {c}"),
            )?;
        }
        check(
            !self.sweep_levels.is_empty() && self.sweep_levels.iter().all(|&l| l <= 50),
            format!("sweep.levels must be non-empty percentages within 0..=50, got {:?}", self.sweep_levels),
        )?;
        check(
            !self.sweep_seeds.is_empty(),
            "sweep.seeds must be non-empty".to_string(),
        )?;
        check(
            self.sweep_workers >= 1,
            format!("sweep.workers must be at least 1, got {}", self.sweep_workers),
        )?;
        Ok(())
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            blocks: self.flow_blocks,
            hidden: self.flow_hidden,
            clamp_alpha: self.flow_clamp_alpha,
            lr: self.train_lr,
            budget: self.train_budget,
            batch: self.train_batch,
            seed: self.seed,
        }
    }

    pub fn refinement_config(&self) -> RefinementConfig {
        RefinementConfig {
            pretrain_epochs: self.irp_pretrain,
            epochs_per_cycle: self.irp_cycle_epochs,
            threshold_multiplier: self.irp_threshold_multiplier,
            warm_start: self.irp_warm_start,
        }
    }

    pub fn transform_spec(&self) -> TransformSpec {
        TransformSpec {
            count_train: self.score_count_train,
            count_eval: self.score_count_eval,
        }
    }

    pub fn sweep_config(&self) -> SweepConfig {
        SweepConfig {
            levels: self.sweep_levels.clone(),
            seeds: self.sweep_seeds.clone(),
            dataset: self.dataset.clone(),
            train: self.train_config(),
            refine: self.refinement_config(),
            transforms: self.transform_spec(),
            mode: self.score_mode,
            workers: self.sweep_workers,
            measure_time: false,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_text_gives_defaults() {
        let cfg = parse_config("").unwrap();
        assert_eq!(cfg, RunConfig::default());
    }

    #[test]
    fn single_override() {
        let cfg = parse_config("irp.threshold_multiplier = 3.0\n").unwrap();
        assert_eq!(cfg.irp_threshold_multiplier, 3.0);
        let mut expected = RunConfig::default();
        expected.irp_threshold_multiplier = 3.0;
        assert_eq!(cfg, expected);
    }

    #[test]
    fn negative_blocks_rejected_naming_key() {
        let err = parse_config("flow.blocks = -1\n").unwrap_err();
        assert!(err.to_string().contains("flow.blocks"), "{err}");
    }

    #[test]
    fn duplicate_key_names_line() {
        let err = parse_config("seed = 1\nseed = 2\n").unwrap_err();
        match err {
            Error::Parse { line, msg } => {
                assert_eq!(line, 2);
                assert!(msg.contains("duplicate"));
            }
            other => panic!("expected parse error, got {other}"),
        }
    }

    #[test]
    fn unknown_key_rejected() {
        let err = parse_config("flow.depth = 3\n").unwrap_err();
        assert!(err.to_string().contains("flow.depth"));
    }

    #[test]
    fn comments_and_blanks_ignored() {
        let cfg = parse_config("# a comment\n\n  # another\nseed = 9\n").unwrap();
        assert_eq!(cfg.seed, 9);
    }

    #[test]
    fn lists_parse() {
        let cfg = parse_config("sweep.levels = 0, 20, 40\nsweep.seeds = 5,6\n").unwrap();
        assert_eq!(cfg.sweep_levels, vec![0, 20, 40]);
        assert_eq!(cfg.sweep_seeds, vec![5, 6]);
    }

    #[test]
    fn cross_field_validation() {
        assert!(parse_config("dataset.contamination = 0.7\n").is_err());
        assert!(parse_config("irp.pretrain = 300\n").is_err());
        assert!(parse_config("score.count_eval = 9\n").is_err());
        assert!(parse_config("sweep.levels = 60\n").is_err());
    }

    #[test]
    fn mode_parses() {
        let cfg = parse_config("score.mode = full_likelihood\n").unwrap();
        assert_eq!(cfg.score_mode, ScoreMode::FullLikelihood);
        assert!(parse_config("score.mode = other\n").is_err());
    }
}
