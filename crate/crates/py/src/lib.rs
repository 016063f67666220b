//! Python bindings: dataset generation, training (vanilla / OSR / IRP),
//! scoring, AUROC, and the noise sweep, driven in-process from Python.

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

use irp_core::config::RunConfig;
use irp_core::dataset::{self, Split};
use irp_core::evaluation::{self, Method};
use irp_core::refinement::{run_irp, run_osr, run_vanilla, TrainOutcome};
use irp_core::scoring::{score_dataset, ScoreMode};

fn to_py_err(e: irp_core::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn parse_split(split: &str) -> PyResult<Split> {
    match split {
        "train" => Ok(Split::Train),
        "test" => Ok(Split::Test),
        other => Err(PyValueError::new_err(format!("unknown split '{other}'"))),
    }
}

/// A synthetic contaminated dataset.
#[pyclass]
struct Dataset {
    inner: dataset::Dataset,
}

#[pymethods]
impl Dataset {
    fn train_size(&self) -> usize {
        self.inner.train_size()
    }

    fn test_size(&self) -> usize {
        self.inner.split_samples(Split::Test).count()
    }

    fn contamination(&self) -> f64 {
        self.inner.contamination_rate
    }

    fn save(&self, path: &str) -> PyResult<()> {
        self.inner.save(std::path::Path::new(path)).map_err(to_py_err)
    }

    /// Hidden ground-truth labels of one split as (id, is_anomalous) pairs
    /// (evaluation only; training never sees them).
    fn labels(&self, split: &str) -> PyResult<Vec<(u64, bool)>> {
        let split = parse_split(split)?;
        Ok(self
            .inner
            .split_samples(split)
            .map(|s| (s.id, s.true_label == dataset::Label::Anomalous))
            .collect())
    }

    fn __repr__(&self) -> String {
        format!(
            "Dataset(train={}, test={}, contamination={}, image_size={})",
            self.train_size(),
            self.test_size(),
            self.inner.contamination_rate,
            self.inner.image_size
        )
    }
}

/// A trained flow plus its frozen normalizer and run logs.
#[pyclass]
struct TrainedModel {
    outcome: TrainOutcome,
    method: Method,
}

#[pymethods]
impl TrainedModel {
    fn method(&self) -> &'static str {
        self.method.as_str()
    }

    fn epochs(&self) -> usize {
        self.outcome.train_log.epochs_run()
    }

    fn final_nll(&self) -> f64 {
        self.outcome
            .train_log
            .epoch_nll
            .last()
            .copied()
            .unwrap_or(self.outcome.train_log.initial_nll)
    }

    fn removed_ids(&self) -> Vec<u64> {
        self.outcome.refinement_log.removed_ids()
    }

    /// Refinement decisions as (cycle, removed_id or None, median,
    /// threshold) tuples.
    fn events(&self) -> Vec<(u32, Option<u64>, f64, f64)> {
        self.outcome
            .refinement_log
            .events
            .iter()
            .map(|e| (e.cycle, e.removed_id, e.median, e.threshold))
            .collect()
    }

    fn save_checkpoint(&self, path: &str) -> PyResult<()> {
        self.outcome
            .model
            .save_checkpoint(std::path::Path::new(path))
            .map_err(to_py_err)
    }

    fn __repr__(&self) -> String {
        format!(
            "TrainedModel(method={}, epochs={}, removals={})",
            self.method.as_str(),
            self.epochs(),
            self.outcome.refinement_log.removal_count()
        )
    }
}

/// Generate a synthetic dataset (defaults mirror the CLI config).
#[pyfunction]
#[pyo3(signature = (seed=1, n_train=400, contamination=0.2, n_test_normal=100, n_test_anomalous=100))]
fn generate_dataset(
    seed: u64,
    n_train: usize,
    contamination: f64,
    n_test_normal: usize,
    n_test_anomalous: usize,
) -> PyResult<Dataset> {
    let cfg = dataset::DatasetConfig {
        n_train,
        n_test_normal,
        n_test_anomalous,
        contamination,
        ..dataset::DatasetConfig::default()
    };
    Ok(Dataset {
        inner: dataset::generate(&cfg, seed).map_err(to_py_err)?,
    })
}

#[pyfunction]
fn load_dataset(path: &str) -> PyResult<Dataset> {
    Ok(Dataset {
        inner: dataset::Dataset::load(std::path::Path::new(path)).map_err(to_py_err)?,
    })
}

/// Train one method on the dataset's train split.
#[pyfunction]
#[pyo3(signature = (data, method="irp", seed=1, budget=200, pretrain=30, cycle_epochs=1,
                    threshold_multiplier=1.3, warm_start=true, blocks=4, hidden=64, lr=2e-4))]
#[allow(clippy::too_many_arguments)]
fn train(
    data: &Dataset,
    method: &str,
    seed: u64,
    budget: usize,
    pretrain: usize,
    cycle_epochs: usize,
    threshold_multiplier: f64,
    warm_start: bool,
    blocks: usize,
    hidden: usize,
    lr: f64,
) -> PyResult<TrainedModel> {
    let method = Method::parse(method).map_err(to_py_err)?;
    let defaults = RunConfig::default();
    let tc = irp_core::train::TrainConfig {
        blocks,
        hidden,
        clamp_alpha: defaults.flow_clamp_alpha,
        lr,
        budget,
        batch: defaults.train_batch,
        seed,
    };
    let rc = irp_core::refinement::RefinementConfig {
        pretrain_epochs: pretrain,
        epochs_per_cycle: cycle_epochs,
        threshold_multiplier,
        warm_start,
    };
    let transforms = defaults.transform_spec();
    let mode = ScoreMode::PriorOnly;
    let outcome = match method {
        Method::Vanilla => run_vanilla(&data.inner, &tc),
        Method::Osr => run_osr(&data.inner, &rc, &tc, &transforms, mode),
        Method::Irp => run_irp(&data.inner, &rc, &tc, &transforms, mode),
    }
    .map_err(to_py_err)?;
    Ok(TrainedModel { outcome, method })
}

/// Score one split: returns (id, score) pairs in dataset order.
#[pyfunction]
#[pyo3(signature = (model, data, split="test", count=8))]
fn score(
    model: &TrainedModel,
    data: &Dataset,
    split: &str,
    count: usize,
) -> PyResult<Vec<(u64, f64)>> {
    let split = parse_split(split)?;
    let table = score_dataset(
        &model.outcome.model,
        &model.outcome.normalizer,
        &data.inner,
        split,
        count,
        ScoreMode::PriorOnly,
    )
    .map_err(to_py_err)?;
    Ok(table.entries)
}

/// Rank-based AUROC over (score, is_anomalous) pairs, ties counted half.
#[pyfunction]
fn auroc(scored: Vec<(f64, bool)>) -> PyResult<f64> {
    evaluation::auroc(&scored).map_err(to_py_err)
}

/// Run the noise sweep and return the report as a CSV string.
#[pyfunction]
#[pyo3(signature = (levels=vec![0, 10, 20, 30, 40, 50], seeds=vec![1, 2, 3, 4, 5],
                    n_train=400, budget=200, pretrain=30, workers=1))]
fn noise_sweep_csv(
    levels: Vec<u32>,
    seeds: Vec<u64>,
    n_train: usize,
    budget: usize,
    pretrain: usize,
    workers: usize,
) -> PyResult<String> {
    let defaults = RunConfig::default();
    let mut cfg = defaults.sweep_config();
    cfg.levels = levels;
    cfg.seeds = seeds;
    cfg.dataset.n_train = n_train;
    cfg.train.budget = budget;
    cfg.refine.pretrain_epochs = pretrain;
    cfg.workers = workers;
    let report = evaluation::noise_sweep(&cfg).map_err(to_py_err)?;
    evaluation::render_csv(&report).map_err(to_py_err)
}

#[pymodule]
fn irp_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add_class::<Dataset>()?;
    m.add_class::<TrainedModel>()?;
    m.add_function(wrap_pyfunction!(generate_dataset, m)?)?;
    m.add_function(wrap_pyfunction!(load_dataset, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(score, m)?)?;
    m.add_function(wrap_pyfunction!(auroc, m)?)?;
    m.add_function(wrap_pyfunction!(noise_sweep_csv, m)?)?;
    Ok(())
}
