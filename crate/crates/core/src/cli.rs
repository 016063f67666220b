//! Command-line front end.
//!
//! Commands: `gen-data`, `train`, `score`, `sweep`, `report`. All outputs
//! land under `out.dir` with stable filenames; a fixed config plus seed
//! produces byte-identical outputs across runs and worker counts.
//!
//! Exit codes: 0 success, 1 usage/validation error, 2 runtime failure.

use std::fs;
use std::path::{Path, PathBuf};

use crate::config::{parse_config, RunConfig};
use crate::dataset::{self, Dataset, Split};
use crate::error::{Error, Result};
use crate::evaluation::{self, Method};
use crate::features::{extract, fit_normalizer, FeatureVector, Normalizer};
use crate::flow::FlowModel;
use crate::refinement::{run_irp, run_osr, run_vanilla, TrainOutcome};
use crate::scoring::score_dataset;

pub const USAGE: &str = "\
usage: irp <command> [options]

commands:
  gen-data   generate a synthetic dataset        -> <out>/dataset.csv
  train      train one method on the dataset     -> <out>/model_<method>.ckpt,
                                                    <out>/train_log_<method>.csv,
                                                    <out>/refinement_log_<method>.csv
  score      score a split with a trained model  -> <out>/scores_<method>_<split>.csv
  sweep      run the noise-level sweep           -> <out>/report.csv
  report     render the sweep report             -> <out>/report.svg

options:
  --config <path>    flat key = value config file (defaults apply if omitted)
  --method <name>    vanilla | osr | irp (train, score; default irp)
  --split <name>     train | test (score; default test)
  --workers <n>      sweep worker threads (overrides sweep.workers)
  --timings          record measured wall time in the sweep report
                     (breaks byte reproducibility)
";

struct Args {
    command: String,
    config_path: Option<PathBuf>,
    method: Method,
    split: Split,
    workers: Option<usize>,
    timings: bool,
}

fn parse_args(args: &[String]) -> Result<Args> {
    if args.is_empty() {
        return Err(Error::invalid("missing command".to_string()));
    }
    let mut parsed = Args {
        command: args[0].clone(),
        config_path: None,
        method: Method::Irp,
        split: Split::Test,
        workers: None,
        timings: false,
    };
    let mut i = 1;
    let value_of = |i: &mut usize, flag: &str| -> Result<String> {
        *i += 1;
        args.get(*i)
            .cloned()
            .ok_or_else(|| Error::invalid(format!("{flag} expects a value")))
    };
    while i < args.len() {
        match args[i].as_str() {
            "--config" => parsed.config_path = Some(PathBuf::from(value_of(&mut i, "--config")?)),
            "--method" => parsed.method = Method::parse(&value_of(&mut i, "--method")?)?,
            "--split" => {
                parsed.split = match value_of(&mut i, "--split")?.as_str() {
                    "train" => Split::Train,
                    "test" => Split::Test,
                    other => {
                        return Err(Error::invalid(format!(
                            "unknown split '{other}' (expected train or test)"
                        )))
                    }
                }
            }
            "--workers" => {
                let v = value_of(&mut i, "--workers")?;
                let n: usize = v
                    .parse()
                    .map_err(|_| Error::invalid(format!("invalid worker count '{v}'")))?;
                parsed.workers = Some(n);
            }
            "--timings" => parsed.timings = true,
            other => return Err(Error::invalid(format!("unknown option '{other}'"))),
        }
        i += 1;
    }
    Ok(parsed)
}

fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    match path {
        Some(p) => {
            let text = fs::read_to_string(p)
                .map_err(|e| Error::invalid(format!("cannot read config {}: {e}", p.display())))?;
            parse_config(&text)
        }
        None => Ok(RunConfig::default()),
    }
}

fn dataset_path(cfg: &RunConfig) -> PathBuf {
    Path::new(&cfg.out_dir).join("dataset.csv")
}

fn checkpoint_path(cfg: &RunConfig, method: Method) -> PathBuf {
    Path::new(&cfg.out_dir).join(format!("model_{}.ckpt", method.as_str()))
}

fn load_dataset_for(cfg: &RunConfig) -> Result<Dataset> {
    let path = dataset_path(cfg);
    Dataset::load(&path)
        .map_err(|e| Error::invalid(format!("cannot load dataset {}: {e} (run gen-data first?)", path.display())))
}

/// Refit the frozen normalizer from the dataset's train split; identical
/// to the one fitted at training time because the extractor and fit are
/// deterministic and the dataset file is never mutated.
fn refit_normalizer(data: &Dataset) -> Result<Normalizer> {
    let feats: Vec<FeatureVector> = data
        .split_samples(Split::Train)
        .map(|s| extract(&s.image))
        .collect::<Result<_>>()?;
    fit_normalizer(&feats)
}

fn ensure_out_dir(cfg: &RunConfig) -> Result<()> {
    fs::create_dir_all(&cfg.out_dir)?;
    Ok(())
}

fn cmd_gen_data(cfg: &RunConfig) -> Result<()> {
    ensure_out_dir(cfg)?;
    let data = dataset::generate(&cfg.dataset, cfg.seed)?;
    let path = dataset_path(cfg);
    data.save(&path)?;
    println!(
        "wrote {} ({} train, {} test samples)",
        path.display(),
        data.train_size(),
        data.split_samples(Split::Test).count()
    );
    Ok(())
}

fn cmd_train(cfg: &RunConfig, method: Method) -> Result<()> {
    ensure_out_dir(cfg)?;
    let data = load_dataset_for(cfg)?;
    let tc = cfg.train_config();
    let outcome: TrainOutcome = match method {
        Method::Vanilla => run_vanilla(&data, &tc)?,
        Method::Osr => run_osr(
            &data,
            &cfg.refinement_config(),
            &tc,
            &cfg.transform_spec(),
            cfg.score_mode,
        )?,
        Method::Irp => run_irp(
            &data,
            &cfg.refinement_config(),
            &tc,
            &cfg.transform_spec(),
            cfg.score_mode,
        )?,
    };
    let ckpt = checkpoint_path(cfg, method);
    outcome.model.save_checkpoint(&ckpt)?;
    let train_log = Path::new(&cfg.out_dir).join(format!("train_log_{}.csv", method.as_str()));
    fs::write(&train_log, outcome.train_log.to_csv_string())?;
    let ref_log = Path::new(&cfg.out_dir).join(format!("refinement_log_{}.csv", method.as_str()));
    fs::write(&ref_log, outcome.refinement_log.to_csv_string())?;
    println!(
        "trained {} for {} epochs, removed {} samples; wrote {}",
        method.as_str(),
        outcome.train_log.epochs_run(),
        outcome.refinement_log.removal_count(),
        ckpt.display()
    );
    Ok(())
}

fn cmd_score(cfg: &RunConfig, method: Method, split: Split) -> Result<()> {
    ensure_out_dir(cfg)?;
    let data = load_dataset_for(cfg)?;
    let ckpt = checkpoint_path(cfg, method);
    let model = FlowModel::load_checkpoint(&ckpt)
        .map_err(|e| Error::invalid(format!("cannot load checkpoint {}: {e} (run train first?)", ckpt.display())))?;
    let normalizer = refit_normalizer(&data)?;
    let count = match split {
        Split::Train => cfg.score_count_train,
        Split::Test => cfg.score_count_eval,
    };
    let table = score_dataset(&model, &normalizer, &data, split, count, cfg.score_mode)?;
    let path = Path::new(&cfg.out_dir).join(format!(
        "scores_{}_{}.csv",
        method.as_str(),
        split.as_str()
    ));
    fs::write(&path, table.to_csv_string())?;
    println!("wrote {} ({} rows)", path.display(), table.entries.len());
    Ok(())
}

fn cmd_sweep(cfg: &RunConfig, workers: Option<usize>, timings: bool) -> Result<()> {
    ensure_out_dir(cfg)?;
    let mut sweep_cfg = cfg.sweep_config();
    if let Some(w) = workers {
        sweep_cfg.workers = w;
    }
    sweep_cfg.measure_time = timings;
    let report = evaluation::noise_sweep(&sweep_cfg)?;
    let path = Path::new(&cfg.out_dir).join("report.csv");
    fs::write(&path, evaluation::render_csv(&report)?)?;
    println!("wrote {} ({} rows)", path.display(), report.rows.len());
    Ok(())
}

fn cmd_report(cfg: &RunConfig) -> Result<()> {
    ensure_out_dir(cfg)?;
    let csv_path = Path::new(&cfg.out_dir).join("report.csv");
    let text = fs::read_to_string(&csv_path)
        .map_err(|e| Error::invalid(format!("cannot read {}: {e} (run sweep first?)", csv_path.display())))?;
    let report = evaluation::parse_report_csv(&text)?;
    let svg_path = Path::new(&cfg.out_dir).join("report.svg");
    fs::write(&svg_path, evaluation::render_svg(&report)?)?;
    println!("wrote {}", svg_path.display());
    Ok(())
}

/// Dispatch a command line (without the program name); returns the process
/// exit code.
pub fn run(args: &[String]) -> i32 {
    let parsed = match parse_args(args) {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: {e}");
            eprint!("{USAGE}");
            return 1;
        }
    };
    let cfg = match load_config(parsed.config_path.as_deref()) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return 1;
        }
    };
    let result = match parsed.command.as_str() {
        "gen-data" => cmd_gen_data(&cfg),
        "train" => cmd_train(&cfg, parsed.method),
        "score" => cmd_score(&cfg, parsed.method, parsed.split),
        "sweep" => cmd_sweep(&cfg, parsed.workers, parsed.timings),
        "report" => cmd_report(&cfg),
        other => {
            eprintln!("error: unknown command '{other}'");
            eprint!("{USAGE}");
            return 1;
        }
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            2
        }
    }
}
