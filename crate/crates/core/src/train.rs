//! Maximum-likelihood training of the flow with Adam.
//!
//! The [`Trainer`] keeps model, optimizer state, and the epoch-shuffle
//! stream together so the refinement loop can interleave scoring passes
//! with further epochs without perturbing determinism: a run that never
//! removes a sample consumes exactly the same random stream as plain
//! training with the same seed.

use crate::error::{Error, Result};
use crate::features::FeatureVector;
use crate::flow::{FlowModel, Workspace};
use crate::rng::Rng;

const EPOCH_SHUFFLE_TAG: u64 = 0x6570_6f63_68; // substream for batch order

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// Training parameters for one run (architecture plus optimization).
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub blocks: usize,
    pub hidden: usize,
    pub clamp_alpha: f64,
    pub lr: f64,
    /// Total epoch budget of the run; refinement splits it into
    /// pretraining and per-cycle retraining.
    pub budget: usize,
    pub batch: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            blocks: crate::flow::DEFAULT_BLOCKS,
            hidden: crate::flow::DEFAULT_HIDDEN,
            clamp_alpha: crate::flow::DEFAULT_CLAMP_ALPHA,
            lr: 2e-4,
            budget: 200,
            batch: 32,
            seed: 1,
        }
    }
}

/// Per-epoch mean training NLL plus the pre-training evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainLog {
    /// Full-data NLL evaluated before any update (epoch 0).
    pub initial_nll: f64,
    /// One entry per trained epoch: the running mean NLL over that epoch's
    /// batches, measured at gradient time.
    pub epoch_nll: Vec<f64>,
    pub seed: u64,
}

impl TrainLog {
    pub fn epochs_run(&self) -> usize {
        self.epoch_nll.len()
    }

    pub fn to_csv_string(&self) -> String {
        let mut out = String::from("epoch,nll\n");
        out.push_str(&format!("0,{}\n", crate::fmt_g9(self.initial_nll)));
        for (i, nll) in self.epoch_nll.iter().enumerate() {
            out.push_str(&format!("{},{}\n", i + 1, crate::fmt_g9(*nll)));
        }
        out
    }
}

/// Feature vectors flattened into an `n x dim` row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub data: Vec<f64>,
    pub n: usize,
    pub dim: usize,
}

impl FeatureMatrix {
    pub fn from_vectors(feats: &[FeatureVector]) -> Result<Self> {
        if feats.is_empty() {
            return Err(Error::invalid("empty feature list".to_string()));
        }
        let dim = feats[0].dim();
        let mut data = Vec::with_capacity(feats.len() * dim);
        for f in feats {
            if f.dim() != dim {
                return Err(Error::invalid("feature dimensions differ".to_string()));
            }
            if !f.values.iter().all(|v| v.is_finite()) {
                return Err(Error::invalid("non-finite feature value".to_string()));
            }
            data.extend_from_slice(&f.values);
        }
        Ok(Self {
            data,
            n: feats.len(),
            dim,
        })
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }
}

/// Adam moment accumulators, shapes mirroring the flat parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl AdamState {
    pub fn new(param_count: usize) -> Self {
        Self {
            m: vec![0.0; param_count],
            v: vec![0.0; param_count],
            t: 0,
        }
    }

    pub fn step(&mut self, model: &mut FlowModel, grads: &[f64], lr: f64) {
        debug_assert_eq!(grads.len(), self.m.len());
        self.t += 1;
        let bc1 = 1.0 - ADAM_BETA1.powi(self.t as i32);
        let bc2 = 1.0 - ADAM_BETA2.powi(self.t as i32);
        let mut i = 0;
        let (m, v) = (&mut self.m, &mut self.v);
        model.for_each_param_mut(|p| {
            let g = grads[i];
            m[i] = ADAM_BETA1 * m[i] + (1.0 - ADAM_BETA1) * g;
            v[i] = ADAM_BETA2 * v[i] + (1.0 - ADAM_BETA2) * g * g;
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            *p -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
            i += 1;
        });
    }
}

/// Mean NLL over the rows of `feats` selected by `idx`, without gradients.
pub fn mean_nll(model: &FlowModel, feats: &FeatureMatrix, idx: &[usize], ws: &mut Workspace) -> f64 {
    debug_assert!(!idx.is_empty());
    let d = feats.dim;
    let chunk = 256;
    let mut total = 0.0;
    let mut buf = Vec::with_capacity(chunk * d);
    let c = 0.5 * d as f64 * (2.0 * std::f64::consts::PI).ln();
    for ids in idx.chunks(chunk) {
        buf.clear();
        for &i in ids {
            buf.extend_from_slice(feats.row(i));
        }
        model.forward_batch_into(&buf, ids.len(), ws);
        for b in 0..ids.len() {
            let zr = &ws.z[b * d..(b + 1) * d];
            let sq: f64 = zr.iter().map(|z| z * z).sum();
            total += c + 0.5 * sq - ws.logdet[b];
        }
    }
    total / idx.len() as f64
}

/// Streaming trainer: owns the model, Adam state, shuffle stream, and log.
#[derive(Debug)]
pub struct Trainer {
    pub model: FlowModel,
    opt: AdamState,
    shuffle_rng: Rng,
    pub log: TrainLog,
    lr: f64,
    batch: usize,
    ws: Workspace,
    order: Vec<usize>,
    batch_buf: Vec<f64>,
}

impl Trainer {
    /// Start a run: records the pre-training NLL of `feats` (full set) as
    /// epoch 0 of the log.
    pub fn new(
        model: FlowModel,
        feats: &FeatureMatrix,
        lr: f64,
        batch: usize,
        seed: u64,
    ) -> Result<Self> {
        if feats.dim != model.dim {
            return Err(Error::invalid(format!(
                "feature dim {} does not match flow dim {}",
                feats.dim, model.dim
            )));
        }
        if lr <= 0.0 || !lr.is_finite() {
            return Err(Error::invalid(format!("learning rate must be positive, got {lr}")));
        }
        if batch == 0 {
            return Err(Error::invalid("batch size must be positive".to_string()));
        }
        let mut ws = Workspace::new();
        let all: Vec<usize> = (0..feats.n).collect();
        let initial_nll = mean_nll(&model, feats, &all, &mut ws);
        let param_count = model.param_count();
        Ok(Self {
            model,
            opt: AdamState::new(param_count),
            shuffle_rng: Rng::substream(seed, EPOCH_SHUFFLE_TAG),
            log: TrainLog {
                initial_nll,
                epoch_nll: Vec::new(),
                seed,
            },
            lr,
            batch,
            ws,
            order: Vec::new(),
            batch_buf: Vec::new(),
        })
    }

    /// Train `epochs` epochs on the `live` rows of `feats`. Batch size is
    /// min(configured, live count); batch order is reshuffled per epoch
    /// from the trainer's stream.
    pub fn run_epochs(&mut self, feats: &FeatureMatrix, live: &[usize], epochs: usize) -> Result<()> {
        if live.is_empty() {
            return Err(Error::invalid("empty training set".to_string()));
        }
        let bsz = self.batch.min(live.len());
        for _ in 0..epochs {
            self.order.clear();
            self.order.extend_from_slice(live);
            self.shuffle_rng.shuffle(&mut self.order);
            let mut total = 0.0;
            for chunk_start in (0..self.order.len()).step_by(bsz) {
                let chunk = &self.order[chunk_start..(chunk_start + bsz).min(self.order.len())];
                self.batch_buf.clear();
                for &i in chunk {
                    self.batch_buf.extend_from_slice(feats.row(i));
                }
                let loss = self
                    .model
                    .nll_and_grad_into(&self.batch_buf, chunk.len(), &mut self.ws);
                total += loss * chunk.len() as f64;
                let grads = std::mem::take(&mut self.ws.grads);
                self.opt.step(&mut self.model, &grads, self.lr);
                self.ws.grads = grads;
            }
            self.model.trained_epochs += 1;
            self.log.epoch_nll.push(total / live.len() as f64);
        }
        Ok(())
    }

    /// Replace the model with a fresh one and reset the optimizer (cold
    /// restart). The shuffle stream continues uninterrupted.
    pub fn reset_model(&mut self, model: FlowModel) {
        self.opt = AdamState::new(model.param_count());
        self.model = model;
    }

    pub fn finish(self) -> (FlowModel, TrainLog) {
        (self.model, self.log)
    }
}

/// Train a fresh copy of `model` on `feats` for `cfg.budget` epochs.
pub fn train(
    model: FlowModel,
    feats: &[FeatureVector],
    cfg: &TrainConfig,
) -> Result<(FlowModel, TrainLog)> {
    if feats.is_empty() {
        return Err(Error::invalid("empty feature list".to_string()));
    }
    let matrix = FeatureMatrix::from_vectors(feats)?;
    let mut trainer = Trainer::new(model, &matrix, cfg.lr, cfg.batch, cfg.seed)?;
    let live: Vec<usize> = (0..matrix.n).collect();
    trainer.run_epochs(&matrix, &live, cfg.budget)?;
    Ok(trainer.finish())
}
