//! AUROC, removed-sample accounting, and the noise-sweep harness.
//!
//! The sweep runs vanilla, OSR, and IRP with identical budgets and seeds
//! at each contamination level, scores the test split with the evaluation
//! transform count, and reports one row per (level, method, seed). Cells
//! are independent and may run on several worker threads; the output order
//! is canonical regardless of schedule.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use crate::dataset::{self, Dataset, DatasetConfig, Label, Split, TransformSpec};
use crate::error::{Error, Result};
use crate::refinement::{run_irp, run_osr, run_vanilla, RefinementConfig, RefinementLog, TrainOutcome};
use crate::scoring::{score_dataset, ScoreMode};
use crate::train::TrainConfig;
use crate::fmt_g9;

/// Probability that a uniformly random anomalous sample outscores a
/// uniformly random normal one, ties counted half (the rank / Mann-Whitney
/// form, O(n log n)). Input: (score, is_anomalous) pairs.
pub fn auroc(scored: &[(f64, bool)]) -> Result<f64> {
    let n_pos = scored.iter().filter(|(_, a)| *a).count();
    let n_neg = scored.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::invalid(
            "AUROC needs at least one sample of each class".to_string(),
        ));
    }
    let mut order: Vec<usize> = (0..scored.len()).collect();
    order.sort_by(|&a, &b| scored[a].0.total_cmp(&scored[b].0));
    // average ranks over tie groups, then sum positive ranks
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j < order.len() && scored[order[j]].0 == scored[order[i]].0 {
            j += 1;
        }
        let avg_rank = (i + j + 1) as f64 / 2.0; // 1-based
        for &idx in &order[i..j] {
            if scored[idx].1 {
                rank_sum_pos += avg_rank;
            }
        }
        i = j;
    }
    let u = rank_sum_pos - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos as f64 * n_neg as f64))
}

/// Removal counts by hidden ground-truth label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct GoodBadCounts {
    pub good_removed: u32,
    pub bad_removed: u32,
}

/// Count the removals of a refinement log by true label. Purely an
/// evaluation-side view; never influences training.
pub fn removal_accounting(log: &RefinementLog, dataset: &Dataset) -> Result<GoodBadCounts> {
    let mut counts = GoodBadCounts::default();
    for id in log.removed_ids() {
        let sample = dataset
            .sample_by_id(id)
            .ok_or_else(|| Error::invalid(format!("removed id {id} not in dataset")))?;
        match sample.true_label {
            Label::Normal => counts.good_removed += 1,
            Label::Anomalous => counts.bad_removed += 1,
        }
    }
    Ok(counts)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Method {
    Vanilla,
    Osr,
    Irp,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Vanilla, Method::Osr, Method::Irp];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Vanilla => "vanilla",
            Method::Osr => "osr",
            Method::Irp => "irp",
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        match text {
            "vanilla" => Ok(Method::Vanilla),
            "osr" => Ok(Method::Osr),
            "irp" => Ok(Method::Irp),
            other => Err(Error::invalid(format!(
                "unknown method '{other}' (expected vanilla, osr, or irp)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub noise_level: u32,
    pub method: Method,
    pub seed: u64,
    pub auroc: f64,
    pub good_removed: u32,
    pub bad_removed: u32,
    pub epochs: u32,
    /// Measured seconds when timing is enabled; 0 otherwise so that report
    /// bytes stay reproducible across runs and worker counts.
    pub wall_time: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentReport {
    pub rows: Vec<ReportRow>,
}

/// Sweep parameters: the grid plus everything one cell needs.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepConfig {
    /// Contamination levels in percent (level/100 is the train rate).
    pub levels: Vec<u32>,
    pub seeds: Vec<u64>,
    pub dataset: DatasetConfig,
    pub train: TrainConfig,
    pub refine: RefinementConfig,
    pub transforms: TransformSpec,
    pub mode: ScoreMode,
    pub workers: usize,
    /// Record measured wall time per row (breaks byte reproducibility of
    /// the rendered report; off by default).
    pub measure_time: bool,
}

impl SweepConfig {
    pub fn validate(&self) -> Result<()> {
        if self.levels.is_empty() {
            return Err(Error::invalid("sweep needs at least one noise level".to_string()));
        }
        if self.seeds.is_empty() {
            return Err(Error::invalid("sweep needs at least one seed".to_string()));
        }
        if self.levels.iter().any(|&l| l > 50) {
            return Err(Error::invalid(
                "noise levels above 50% are out of range".to_string(),
            ));
        }
        if self.workers == 0 {
            return Err(Error::invalid("worker count must be positive".to_string()));
        }
        Ok(())
    }
}

fn run_method(
    method: Method,
    data: &Dataset,
    cfg: &SweepConfig,
    tc: &TrainConfig,
) -> Result<TrainOutcome> {
    match method {
        Method::Vanilla => run_vanilla(data, tc),
        Method::Osr => run_osr(data, &cfg.refine, tc, &cfg.transforms, cfg.mode),
        Method::Irp => run_irp(data, &cfg.refine, tc, &cfg.transforms, cfg.mode),
    }
}

/// One (level, seed) cell: generate the dataset, run all three methods
/// with identical budgets and seeds, evaluate each on the test split.
fn run_cell(cfg: &SweepConfig, level: u32, seed: u64) -> Result<Vec<ReportRow>> {
    let context = |method: Method, e: Error| {
        Error::invalid(format!(
            "sweep cell (level={level}%, seed={seed}, method={}): {e}",
            method.as_str()
        ))
    };
    let ds_cfg = DatasetConfig {
        contamination: level as f64 / 100.0,
        ..cfg.dataset.clone()
    };
    let data = dataset::generate(&ds_cfg, seed)
        .map_err(|e| Error::invalid(format!("sweep cell (level={level}%, seed={seed}): {e}")))?;
    let tc = TrainConfig {
        seed,
        ..cfg.train.clone()
    };

    let mut rows = Vec::with_capacity(Method::ALL.len());
    for method in Method::ALL {
        let start = Instant::now();
        let outcome = run_method(method, &data, cfg, &tc).map_err(|e| context(method, e))?;
        let table = score_dataset(
            &outcome.model,
            &outcome.normalizer,
            &data,
            Split::Test,
            cfg.transforms.count_eval,
            cfg.mode,
        )
        .map_err(|e| context(method, e))?;
        let scored: Vec<(f64, bool)> = table
            .entries
            .iter()
            .map(|(id, score)| {
                let sample = data.sample_by_id(*id).expect("scored id exists");
                (*score, sample.true_label == Label::Anomalous)
            })
            .collect();
        let auc = auroc(&scored).map_err(|e| context(method, e))?;
        let counts = removal_accounting(&outcome.refinement_log, &data)
            .map_err(|e| context(method, e))?;
        rows.push(ReportRow {
            noise_level: level,
            method,
            seed,
            auroc: auc,
            good_removed: counts.good_removed,
            bad_removed: counts.bad_removed,
            epochs: outcome.train_log.epochs_run() as u32,
            wall_time: if cfg.measure_time {
                start.elapsed().as_secs_f64()
            } else {
                0.0
            },
        });
    }
    Ok(rows)
}

/// Run the full noise sweep. Rows come out in canonical (level, method,
/// seed) order regardless of the worker schedule.
pub fn noise_sweep(cfg: &SweepConfig) -> Result<ExperimentReport> {
    cfg.validate()?;
    let cells: Vec<(u32, u64)> = cfg
        .levels
        .iter()
        .flat_map(|&l| cfg.seeds.iter().map(move |&s| (l, s)))
        .collect();

    let mut slots: Vec<Option<Result<Vec<ReportRow>>>> = Vec::new();
    slots.resize_with(cells.len(), || None);
    let slots = Mutex::new(slots);
    let next = AtomicUsize::new(0);
    let workers = cfg.workers.min(cells.len()).max(1);

    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= cells.len() {
                    break;
                }
                let (level, seed) = cells[i];
                let result = run_cell(cfg, level, seed);
                slots.lock().expect("sweep mutex")[i] = Some(result);
            });
        }
    });

    let slots = slots.into_inner().expect("sweep mutex");
    let mut by_cell = Vec::with_capacity(cells.len());
    for (i, slot) in slots.into_iter().enumerate() {
        let rows = slot.unwrap_or_else(|| {
            panic!("sweep cell {i} never ran");
        })?;
        by_cell.push(rows);
    }

    // canonical order: levels as configured, then method, then seed
    let mut rows: Vec<ReportRow> = Vec::with_capacity(cells.len() * 3);
    for (li, &level) in cfg.levels.iter().enumerate() {
        for method in Method::ALL {
            for (si, &seed) in cfg.seeds.iter().enumerate() {
                let cell = &by_cell[li * cfg.seeds.len() + si];
                let row = cell
                    .iter()
                    .find(|r| r.method == method)
                    .expect("cell holds all methods");
                debug_assert_eq!(row.noise_level, level);
                debug_assert_eq!(row.seed, seed);
                rows.push(row.clone());
            }
        }
    }
    Ok(ExperimentReport { rows })
}

// ── report rendering ────────────────────────────────────────────────────────

pub const REPORT_HEADER: &str =
    "noise_level,method,seed,auroc,good_removed,bad_removed,epochs,wall_time";

pub fn render_csv(report: &ExperimentReport) -> Result<String> {
    if report.rows.is_empty() {
        return Err(Error::invalid("cannot render an empty report".to_string()));
    }
    let mut out = String::from(REPORT_HEADER);
    out.push('\n');
    for r in &report.rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            r.noise_level,
            r.method.as_str(),
            r.seed,
            fmt_g9(r.auroc),
            r.good_removed,
            r.bad_removed,
            r.epochs,
            fmt_g9(r.wall_time)
        ));
    }
    Ok(out)
}

pub fn parse_report_csv(text: &str) -> Result<ExperimentReport> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, header)) if header == REPORT_HEADER => {}
        _ => return Err(Error::parse(1, "missing or malformed report header")),
    }
    let mut rows = Vec::new();
    for (idx, line) in lines {
        let line_no = idx + 1;
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 8 {
            return Err(Error::parse(
                line_no,
                format!("expected 8 fields, found {}", fields.len()),
            ));
        }
        let parse_err = |what: &str| Error::parse(line_no, format!("invalid {what}"));
        rows.push(ReportRow {
            noise_level: fields[0].parse().map_err(|_| parse_err("noise_level"))?,
            method: Method::parse(fields[1]).map_err(|_| parse_err("method"))?,
            seed: fields[2].parse().map_err(|_| parse_err("seed"))?,
            auroc: fields[3].parse().map_err(|_| parse_err("auroc"))?,
            good_removed: fields[4].parse().map_err(|_| parse_err("good_removed"))?,
            bad_removed: fields[5].parse().map_err(|_| parse_err("bad_removed"))?,
            epochs: fields[6].parse().map_err(|_| parse_err("epochs"))?,
            wall_time: fields[7].parse().map_err(|_| parse_err("wall_time"))?,
        });
    }
    if rows.is_empty() {
        return Err(Error::invalid("report holds no rows".to_string()));
    }
    Ok(ExperimentReport { rows })
}

/// Mean AUROC per (level, method), levels in first-seen order.
pub fn mean_auroc_by_level(report: &ExperimentReport, method: Method) -> Vec<(u32, f64)> {
    let mut levels: Vec<u32> = Vec::new();
    for r in &report.rows {
        if !levels.contains(&r.noise_level) {
            levels.push(r.noise_level);
        }
    }
    levels
        .into_iter()
        .map(|level| {
            let vals: Vec<f64> = report
                .rows
                .iter()
                .filter(|r| r.noise_level == level && r.method == method)
                .map(|r| r.auroc)
                .collect();
            (level, vals.iter().sum::<f64>() / vals.len().max(1) as f64)
        })
        .collect()
}

const SVG_WIDTH: f64 = 800.0;
const SVG_HEIGHT: f64 = 500.0;
const MARGIN_LEFT: f64 = 70.0;
const MARGIN_RIGHT: f64 = 30.0;
const MARGIN_TOP: f64 = 30.0;
const MARGIN_BOTTOM: f64 = 60.0;

fn method_color(method: Method) -> &'static str {
    match method {
        Method::Vanilla => "#e0a800",
        Method::Osr => "#2ca02c",
        Method::Irp => "#1f77b4",
    }
}

/// Line chart of mean AUROC vs noise level: fixed 800x500 canvas, one
/// polyline per method in canonical order, deterministic bytes.
pub fn render_svg(report: &ExperimentReport) -> Result<String> {
    if report.rows.is_empty() {
        return Err(Error::invalid("cannot render an empty report".to_string()));
    }
    let mut levels: Vec<u32> = report.rows.iter().map(|r| r.noise_level).collect();
    levels.sort_unstable();
    levels.dedup();
    let max_level = *levels.last().unwrap() as f64;
    let x_span = if max_level > 0.0 { max_level } else { 1.0 };
    let plot_w = SVG_WIDTH - MARGIN_LEFT - MARGIN_RIGHT;
    let plot_h = SVG_HEIGHT - MARGIN_TOP - MARGIN_BOTTOM;
    let x_of = |level: f64| MARGIN_LEFT + plot_w * level / x_span;
    let y_of = |auc: f64| MARGIN_TOP + plot_h * (1.0 - auc);

    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{SVG_WIDTH}\" height=\"{SVG_HEIGHT}\" viewBox=\"0 0 {SVG_WIDTH} {SVG_HEIGHT}\">\n"
    ));
    svg.push_str("<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n");
    // axes
    svg.push_str(&format!(
        "<line x1=\"{:.1}\" y1=\"{:.1}\" x2=\"{:.1}\" y2=\"{:.1}\" stroke=\"black\"/>\n",
        MARGIN_LEFT,
        MARGIN_TOP + plot_h,
        MARGIN_LEFT + plot_w,
        MARGIN_TOP + plot_h
    ));
    svg.push_str(&format!(
        "<line x1=\"{:.1}\" y1=\"{:.1}\" x2=\"{:.1}\" y2=\"{:.1}\" stroke=\"black\"/>\n",
        MARGIN_LEFT,
        MARGIN_TOP,
        MARGIN_LEFT,
        MARGIN_TOP + plot_h
    ));
    // x ticks at each level
    for &level in &levels {
        let x = x_of(level as f64);
        svg.push_str(&format!(
            "<line x1=\"{x:.1}\" y1=\"{:.1}\" x2=\"{x:.1}\" y2=\"{:.1}\" stroke=\"black\"/>\n",
            MARGIN_TOP + plot_h,
            MARGIN_TOP + plot_h + 6.0
        ));
        svg.push_str(&format!(
            "<text x=\"{x:.1}\" y=\"{:.1}\" text-anchor=\"middle\" font-size=\"12\">{level}</text>\n",
            MARGIN_TOP + plot_h + 20.0
        ));
    }
    // y ticks every 0.25
    for k in 0..=4 {
        let auc = k as f64 * 0.25;
        let y = y_of(auc);
        svg.push_str(&format!(
            "<line x1=\"{:.1}\" y1=\"{y:.1}\" x2=\"{:.1}\" y2=\"{y:.1}\" stroke=\"black\"/>\n",
            MARGIN_LEFT - 6.0,
            MARGIN_LEFT
        ));
        svg.push_str(&format!(
            "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"end\" font-size=\"12\">{auc:.2}</text>\n",
            MARGIN_LEFT - 10.0,
            y + 4.0
        ));
    }
    // axis labels
    svg.push_str(&format!(
        "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\" font-size=\"14\">noise level (%)</text>\n",
        MARGIN_LEFT + plot_w / 2.0,
        SVG_HEIGHT - 15.0
    ));
    svg.push_str(&format!(
        "<text x=\"18\" y=\"{:.1}\" text-anchor=\"middle\" font-size=\"14\" transform=\"rotate(-90 18 {:.1})\">mean AUROC</text>\n",
        MARGIN_TOP + plot_h / 2.0,
        MARGIN_TOP + plot_h / 2.0
    ));
    // one polyline per method, canonical order
    for method in Method::ALL {
        let series = mean_auroc_by_level(report, method);
        let mut points = String::new();
        let mut sorted = series.clone();
        sorted.sort_by_key(|(l, _)| *l);
        for (level, auc) in &sorted {
            points.push_str(&format!("{:.1},{:.1} ", x_of(*level as f64), y_of(*auc)));
        }
        svg.push_str(&format!(
            "<polyline points=\"{}\" fill=\"none\" stroke=\"{}\" stroke-width=\"2\"/>\n",
            points.trim_end(),
            method_color(method)
        ));
    }
    // legend
    for (i, method) in Method::ALL.iter().enumerate() {
        let y = MARGIN_TOP + 10.0 + i as f64 * 18.0;
        svg.push_str(&format!(
            "<line x1=\"{:.1}\" y1=\"{y:.1}\" x2=\"{:.1}\" y2=\"{y:.1}\" stroke=\"{}\" stroke-width=\"2\"/>\n",
            MARGIN_LEFT + plot_w - 110.0,
            MARGIN_LEFT + plot_w - 80.0,
            method_color(*method)
        ));
        svg.push_str(&format!(
            "<text x=\"{:.1}\" y=\"{:.1}\" font-size=\"12\">{}</text>\n",
            MARGIN_LEFT + plot_w - 72.0,
            y + 4.0,
            method.as_str()
        ));
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}
