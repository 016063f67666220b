//! Normalizing-flow density model: a stack of affine coupling blocks with
//! fixed seeded permutations, exact log-likelihood via the change of
//! variables formula, and analytic reverse-mode gradients.
//!
//! Per block the input is permuted, split into an active half `a` and a
//! passive half `b`, and transformed as
//!
//! ```text
//!   v_a = a
//!   v_b = b * exp(clamp(s_net(a))) + t_net(a)
//! ```
//!
//! with the soft clamp `clamp(x) = alpha * (2/pi) * atan(x / alpha)`, which
//! bounds every log-scale to (-alpha, alpha) and keeps the map invertible
//! at any parameter value. The log-det Jacobian of a block is the sum of
//! its clamped log-scales. The latent prior is standard normal.

use std::f64::consts::{FRAC_2_PI, PI};
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::features::FeatureVector;
use crate::fmt_g17;
use crate::rng::Rng;

pub const DEFAULT_BLOCKS: usize = 4;
pub const DEFAULT_HIDDEN: usize = 64;
pub const DEFAULT_CLAMP_ALPHA: f64 = 1.9;

/// Two-layer fully connected map with tanh hidden nonlinearity.
/// Weights row-major: `w1` is `n_hidden x n_in`, `w2` is `n_out x n_hidden`.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub n_in: usize,
    pub n_hidden: usize,
    pub n_out: usize,
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
}

impl Mlp {
    fn zeros(n_in: usize, n_hidden: usize, n_out: usize) -> Self {
        Self {
            n_in,
            n_hidden,
            n_out,
            w1: vec![0.0; n_hidden * n_in],
            b1: vec![0.0; n_hidden],
            w2: vec![0.0; n_out * n_hidden],
            b2: vec![0.0; n_out],
        }
    }

    /// Hidden layer seeded uniform in [-1/sqrt(n_in), 1/sqrt(n_in)]; final
    /// layer exactly zero so the freshly initialized coupling is an
    /// identity map.
    fn init(n_in: usize, n_hidden: usize, n_out: usize, rng: &mut Rng) -> Self {
        let mut mlp = Self::zeros(n_in, n_hidden, n_out);
        let bound = 1.0 / (n_in as f64).sqrt();
        for w in mlp.w1.iter_mut() {
            *w = rng.range_f64(-bound, bound);
        }
        for b in mlp.b1.iter_mut() {
            *b = rng.range_f64(-bound, bound);
        }
        mlp
    }

    pub fn param_count(&self) -> usize {
        self.w1.len() + self.b1.len() + self.w2.len() + self.b2.len()
    }

    /// Batched forward: `x` is `bsz x n_in` row-major. Fills `hidden`
    /// (`bsz x n_hidden`, post-tanh) and `out` (`bsz x n_out`).
    fn forward_batch(&self, x: &[f64], bsz: usize, hidden: &mut [f64], out: &mut [f64]) {
        let (ni, nh, no) = (self.n_in, self.n_hidden, self.n_out);
        for b in 0..bsz {
            let xr = &x[b * ni..(b + 1) * ni];
            let hr = &mut hidden[b * nh..(b + 1) * nh];
            for h in 0..nh {
                let wr = &self.w1[h * ni..(h + 1) * ni];
                let mut acc = self.b1[h];
                for i in 0..ni {
                    acc += wr[i] * xr[i];
                }
                hr[h] = acc.tanh();
            }
        }
        for b in 0..bsz {
            let hr = &hidden[b * nh..(b + 1) * nh];
            let or = &mut out[b * no..(b + 1) * no];
            for o in 0..no {
                let wr = &self.w2[o * nh..(o + 1) * nh];
                let mut acc = self.b2[o];
                for h in 0..nh {
                    acc += wr[h] * hr[h];
                }
                or[o] = acc;
            }
        }
    }

    /// Batched backward. `g_out` is the loss gradient at the output;
    /// parameter gradients are accumulated into the `gw1..gb2` slices and
    /// input gradients into `g_x`. `g_hidden` is scratch (`bsz x n_hidden`).
    #[allow(clippy::too_many_arguments)]
    fn backward_batch(
        &self,
        x: &[f64],
        hidden: &[f64],
        g_out: &[f64],
        bsz: usize,
        gw1: &mut [f64],
        gb1: &mut [f64],
        gw2: &mut [f64],
        gb2: &mut [f64],
        g_x: &mut [f64],
        g_hidden: &mut [f64],
    ) {
        let (ni, nh, no) = (self.n_in, self.n_hidden, self.n_out);
        for b in 0..bsz {
            let hr = &hidden[b * nh..(b + 1) * nh];
            let gor = &g_out[b * no..(b + 1) * no];
            let ghr = &mut g_hidden[b * nh..(b + 1) * nh];
            ghr.fill(0.0);
            for o in 0..no {
                let go = gor[o];
                gb2[o] += go;
                let wr = &self.w2[o * nh..(o + 1) * nh];
                let gwr = &mut gw2[o * nh..(o + 1) * nh];
                for h in 0..nh {
                    gwr[h] += go * hr[h];
                    ghr[h] += go * wr[h];
                }
            }
            // through tanh
            for h in 0..nh {
                ghr[h] *= 1.0 - hr[h] * hr[h];
            }
            let xr = &x[b * ni..(b + 1) * ni];
            let gxr = &mut g_x[b * ni..(b + 1) * ni];
            for h in 0..nh {
                let gp = ghr[h];
                gb1[h] += gp;
                let wr = &self.w1[h * ni..(h + 1) * ni];
                let gwr = &mut gw1[h * ni..(h + 1) * ni];
                for i in 0..ni {
                    gwr[i] += gp * xr[i];
                    gxr[i] += gp * wr[i];
                }
            }
        }
    }
}

/// One affine coupling block together with its fixed input permutation.
#[derive(Debug, Clone, PartialEq)]
pub struct CouplingBlock {
    pub perm: Vec<usize>,
    pub s_net: Mlp,
    pub t_net: Mlp,
}

/// The full flow. An immutable value between training updates.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowModel {
    pub dim: usize,
    pub hidden: usize,
    pub clamp_alpha: f64,
    pub blocks: Vec<CouplingBlock>,
    /// Number of training epochs this model has seen (metadata only).
    pub trained_epochs: u64,
}

/// Active-half size (first, larger half for odd dims).
fn active_len(dim: usize) -> usize {
    dim.div_ceil(2)
}

fn passive_len(dim: usize) -> usize {
    dim / 2
}

fn clamp_scale(alpha: f64, x: f64) -> f64 {
    alpha * FRAC_2_PI * (x / alpha).atan()
}

fn clamp_scale_deriv(alpha: f64, x: f64) -> f64 {
    let r = x / alpha;
    FRAC_2_PI / (1.0 + r * r)
}

/// Initialize a flow. Permutations and hidden layers come from the seeded
/// generator; final layers are zero, so the initial flow is the identity
/// composed with its permutations (norm preserving, zero log-det).
pub fn init_flow(dim: usize, blocks: usize, hidden: usize, alpha: f64, seed: u64) -> Result<FlowModel> {
    if dim < 2 {
        return Err(Error::invalid(format!("flow dim must be >= 2, got {dim}")));
    }
    if blocks < 1 {
        return Err(Error::invalid(format!(
            "flow needs at least 1 block, got {blocks}"
        )));
    }
    if hidden < 1 {
        return Err(Error::invalid(format!(
            "hidden width must be >= 1, got {hidden}"
        )));
    }
    if !(alpha > 0.0) || !alpha.is_finite() {
        return Err(Error::invalid(format!(
            "clamp alpha must be positive, got {alpha}"
        )));
    }
    let mut rng = Rng::new(seed);
    let (da, db) = (active_len(dim), passive_len(dim));
    let blocks = (0..blocks)
        .map(|_| CouplingBlock {
            perm: rng.permutation(dim),
            s_net: Mlp::init(da, hidden, db, &mut rng),
            t_net: Mlp::init(da, hidden, db, &mut rng),
        })
        .collect();
    Ok(FlowModel {
        dim,
        hidden,
        clamp_alpha: alpha,
        blocks,
        trained_epochs: 0,
    })
}

/// Scratch buffers for batched passes, reusable across calls.
#[derive(Debug, Default)]
pub struct Workspace {
    // per-block forward caches (training path)
    cache_a: Vec<Vec<f64>>,
    cache_b: Vec<Vec<f64>>,
    cache_hs: Vec<Vec<f64>>,
    cache_ht: Vec<Vec<f64>>,
    cache_sraw: Vec<Vec<f64>>,
    cache_e: Vec<Vec<f64>>,
    /// Latent output of the last batched pass, `bsz x dim` row-major.
    pub z: Vec<f64>,
    /// Per-row log-det Jacobians of the last batched pass.
    pub logdet: Vec<f64>,
    // backward scratch
    g_cur: Vec<f64>,
    g_next: Vec<f64>,
    g_hidden: Vec<f64>,
    g_sraw: Vec<f64>,
    g_t: Vec<f64>,
    /// Flat parameter gradients in canonical order.
    pub grads: Vec<f64>,
    // scoring scratch
    buf_u: Vec<f64>,
    buf_s: Vec<f64>,
    buf_tt: Vec<f64>,
    buf_h: Vec<f64>,
}

impl Workspace {
    pub fn new() -> Self {
        Self::default()
    }
}

impl FlowModel {
    pub fn param_count(&self) -> usize {
        self.blocks
            .iter()
            .map(|b| b.s_net.param_count() + b.t_net.param_count())
            .sum()
    }

    /// Visit every trainable parameter in the canonical (checkpoint) order:
    /// per block, s_net then t_net, each as w1, b1, w2, b2.
    pub fn for_each_param_mut(&mut self, mut f: impl FnMut(&mut f64)) {
        for block in &mut self.blocks {
            for net in [&mut block.s_net, &mut block.t_net] {
                for p in net
                    .w1
                    .iter_mut()
                    .chain(net.b1.iter_mut())
                    .chain(net.w2.iter_mut())
                    .chain(net.b2.iter_mut())
                {
                    f(p);
                }
            }
        }
    }

    pub fn flat_params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for block in &self.blocks {
            for net in [&block.s_net, &block.t_net] {
                out.extend_from_slice(&net.w1);
                out.extend_from_slice(&net.b1);
                out.extend_from_slice(&net.w2);
                out.extend_from_slice(&net.b2);
            }
        }
        out
    }

    pub fn set_flat_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.param_count() {
            return Err(Error::invalid(format!(
                "expected {} parameters, got {}",
                self.param_count(),
                params.len()
            )));
        }
        let mut it = params.iter();
        self.for_each_param_mut(|p| *p = *it.next().unwrap());
        Ok(())
    }

    /// Forward map of a batch (`x` is `bsz x dim` row-major), without
    /// retaining gradients. Fills `ws.z` and `ws.logdet`.
    pub fn forward_batch_into(&self, x: &[f64], bsz: usize, ws: &mut Workspace) {
        let d = self.dim;
        let (da, db) = (active_len(d), passive_len(d));
        debug_assert_eq!(x.len(), bsz * d);
        ws.z.clear();
        ws.z.extend_from_slice(x);
        ws.logdet.clear();
        ws.logdet.resize(bsz, 0.0);
        ws.buf_u.resize(bsz * d, 0.0);
        ws.buf_s.resize(bsz * db, 0.0);
        ws.buf_tt.resize(bsz * db, 0.0);
        ws.buf_h.resize(bsz * self.hidden, 0.0);
        for block in &self.blocks {
            // permute: u[i] = z[perm[i]]
            for b in 0..bsz {
                let zr = &ws.z[b * d..(b + 1) * d];
                let ur = &mut ws.buf_u[b * d..(b + 1) * d];
                for (i, &p) in block.perm.iter().enumerate() {
                    ur[i] = zr[p];
                }
            }
            // active halves are the leading da entries of each row
            // (strided view: copy a rows into contiguous scratch)
            // s and t nets read the active half only.
            let mut a_rows = vec![0.0; bsz * da];
            for b in 0..bsz {
                a_rows[b * da..(b + 1) * da]
                    .copy_from_slice(&ws.buf_u[b * d..b * d + da]);
            }
            block
                .s_net
                .forward_batch(&a_rows, bsz, &mut ws.buf_h, &mut ws.buf_s);
            for v in ws.buf_s.iter_mut() {
                *v = clamp_scale(self.clamp_alpha, *v);
            }
            block
                .t_net
                .forward_batch(&a_rows, bsz, &mut ws.buf_h, &mut ws.buf_tt);
            for b in 0..bsz {
                let ur = &mut ws.buf_u[b * d..(b + 1) * d];
                let sr = &ws.buf_s[b * db..(b + 1) * db];
                let tr = &ws.buf_tt[b * db..(b + 1) * db];
                let mut ld = 0.0;
                for j in 0..db {
                    ur[da + j] = ur[da + j] * sr[j].exp() + tr[j];
                    ld += sr[j];
                }
                ws.logdet[b] += ld;
            }
            ws.z.copy_from_slice(&ws.buf_u);
        }
    }

    /// Forward map of a single vector: returns (z, log_det).
    pub fn forward(&self, y: &FeatureVector) -> Result<(FeatureVector, f64)> {
        self.check_input(&y.values)?;
        let mut ws = Workspace::new();
        self.forward_batch_into(&y.values, 1, &mut ws);
        Ok((
            FeatureVector {
                values: ws.z.clone(),
            },
            ws.logdet[0],
        ))
    }

    /// Exact algebraic inverse, block by block in reverse.
    pub fn inverse(&self, z: &FeatureVector) -> Result<FeatureVector> {
        self.check_input(&z.values)?;
        let d = self.dim;
        let (da, db) = (active_len(d), passive_len(d));
        let mut v = z.values.clone();
        let mut hidden = vec![0.0; self.hidden];
        let mut s = vec![0.0; db];
        let mut t = vec![0.0; db];
        let mut u = vec![0.0; d];
        for block in self.blocks.iter().rev() {
            let a = &v[..da];
            block.s_net.forward_batch(a, 1, &mut hidden, &mut s);
            block.t_net.forward_batch(a, 1, &mut hidden, &mut t);
            u[..da].copy_from_slice(a);
            for j in 0..db {
                let sc = clamp_scale(self.clamp_alpha, s[j]);
                u[da + j] = (v[da + j] - t[j]) * (-sc).exp();
            }
            // invert the permutation: x[perm[i]] = u[i]
            for (i, &p) in block.perm.iter().enumerate() {
                v[p] = u[i];
            }
        }
        Ok(FeatureVector { values: v })
    }

    /// Log-density under the standard-normal latent prior plus the
    /// accumulated log-det Jacobian.
    pub fn log_prob(&self, y: &FeatureVector) -> Result<f64> {
        let (z, log_det) = self.forward(y)?;
        let sq: f64 = z.values.iter().map(|v| v * v).sum();
        Ok(-0.5 * self.dim as f64 * (2.0 * PI).ln() - 0.5 * sq + log_det)
    }

    fn check_input(&self, values: &[f64]) -> Result<()> {
        if values.len() != self.dim {
            return Err(Error::invalid(format!(
                "input dimension {} does not match flow dim {}",
                values.len(),
                self.dim
            )));
        }
        if !values.iter().all(|v| v.is_finite()) {
            return Err(Error::invalid("non-finite input to flow".to_string()));
        }
        Ok(())
    }

    /// Mean negative log-likelihood of a batch and its analytic gradient
    /// (flat, canonical parameter order) via reverse-mode differentiation
    /// through the coupling algebra.
    pub fn nll_and_grad(&self, batch: &[FeatureVector]) -> Result<(f64, Vec<f64>)> {
        if batch.is_empty() {
            return Err(Error::invalid("empty batch".to_string()));
        }
        for f in batch {
            self.check_input(&f.values)?;
        }
        let bsz = batch.len();
        let mut x = Vec::with_capacity(bsz * self.dim);
        for f in batch {
            x.extend_from_slice(&f.values);
        }
        let mut ws = Workspace::new();
        let loss = self.nll_and_grad_into(&x, bsz, &mut ws);
        let grads = ws.grads.clone();
        Ok((loss, grads))
    }

    /// Workspace-reusing core of [`nll_and_grad`]; `x` is `bsz x dim`
    /// row-major and assumed finite. Gradients land in `ws.grads`.
    pub fn nll_and_grad_into(&self, x: &[f64], bsz: usize, ws: &mut Workspace) -> f64 {
        let d = self.dim;
        let (da, db) = (active_len(d), passive_len(d));
        let nh = self.hidden;
        let nblocks = self.blocks.len();
        debug_assert_eq!(x.len(), bsz * d);

        // resize caches
        let grow = |v: &mut Vec<Vec<f64>>, n: usize, len: usize| {
            v.resize_with(n, Vec::new);
            for inner in v.iter_mut() {
                inner.clear();
                inner.resize(len, 0.0);
            }
        };
        grow(&mut ws.cache_a, nblocks, bsz * da);
        grow(&mut ws.cache_b, nblocks, bsz * db);
        grow(&mut ws.cache_hs, nblocks, bsz * nh);
        grow(&mut ws.cache_ht, nblocks, bsz * nh);
        grow(&mut ws.cache_sraw, nblocks, bsz * db);
        grow(&mut ws.cache_e, nblocks, bsz * db);
        ws.z.clear();
        ws.z.extend_from_slice(x);
        ws.logdet.clear();
        ws.logdet.resize(bsz, 0.0);
        ws.buf_u.resize(bsz * d, 0.0);
        ws.buf_s.resize(bsz * db, 0.0);
        ws.buf_tt.resize(bsz * db, 0.0);

        // ── forward, retaining per-block caches ──
        for (k, block) in self.blocks.iter().enumerate() {
            for b in 0..bsz {
                let zr = &ws.z[b * d..(b + 1) * d];
                let ur = &mut ws.buf_u[b * d..(b + 1) * d];
                for (i, &p) in block.perm.iter().enumerate() {
                    ur[i] = zr[p];
                }
            }
            for b in 0..bsz {
                ws.cache_a[k][b * da..(b + 1) * da]
                    .copy_from_slice(&ws.buf_u[b * d..b * d + da]);
                ws.cache_b[k][b * db..(b + 1) * db]
                    .copy_from_slice(&ws.buf_u[b * d + da..(b + 1) * d]);
            }
            block.s_net.forward_batch(
                &ws.cache_a[k],
                bsz,
                &mut ws.cache_hs[k],
                &mut ws.cache_sraw[k],
            );
            block.t_net.forward_batch(
                &ws.cache_a[k],
                bsz,
                &mut ws.cache_ht[k],
                &mut ws.buf_tt,
            );
            for b in 0..bsz {
                let ur = &mut ws.buf_u[b * d..(b + 1) * d];
                let mut ld = 0.0;
                for j in 0..db {
                    let sraw = ws.cache_sraw[k][b * db + j];
                    let s = clamp_scale(self.clamp_alpha, sraw);
                    let e = s.exp();
                    ws.cache_e[k][b * db + j] = e;
                    ur[da + j] = ur[da + j] * e + ws.buf_tt[b * db + j];
                    ld += s;
                }
                ws.logdet[b] += ld;
            }
            ws.z.copy_from_slice(&ws.buf_u);
        }

        // loss = mean over batch of (d/2)ln(2pi) + ||z||^2/2 - logdet
        let inv_b = 1.0 / bsz as f64;
        let mut loss = 0.5 * d as f64 * (2.0 * PI).ln();
        let mut sq = 0.0;
        for b in 0..bsz {
            let zr = &ws.z[b * d..(b + 1) * d];
            sq += zr.iter().map(|v| v * v).sum::<f64>();
            loss -= ws.logdet[b] * inv_b;
        }
        loss += 0.5 * sq * inv_b;

        // ── backward ──
        ws.grads.clear();
        ws.grads.resize(self.param_count(), 0.0);
        ws.g_cur.clear();
        ws.g_cur.resize(bsz * d, 0.0);
        ws.g_next.clear();
        ws.g_next.resize(bsz * d, 0.0);
        ws.g_hidden.resize(bsz * nh, 0.0);
        ws.g_sraw.resize(bsz * db, 0.0);
        ws.g_t.resize(bsz * db, 0.0);
        for (i, g) in ws.g_cur.iter_mut().enumerate() {
            *g = ws.z[i] * inv_b; // d loss / d z
        }

        let per_net = |net: &Mlp| net.param_count();
        let block_span: usize = per_net(&self.blocks[0].s_net) + per_net(&self.blocks[0].t_net);
        for (k, block) in self.blocks.iter().enumerate().rev() {
            let base = k * block_span;
            let (s_grads, t_grads) = {
                let (left, right) = ws.grads[base..base + block_span]
                    .split_at_mut(per_net(&block.s_net));
                (left, right)
            };
            // within-net offsets: w1, b1, w2, b2
            let s_off = (0, nh * da, nh * da + nh, nh * da + nh + db * nh);
            // g on output v: rows [g_a | g_b] in coupled space
            // compute g_t, g_sraw, g_b
            for b in 0..bsz {
                for j in 0..db {
                    let gvb = ws.g_cur[b * d + da + j];
                    let e = ws.cache_e[k][b * db + j];
                    let bp = ws.cache_b[k][b * db + j];
                    let sraw = ws.cache_sraw[k][b * db + j];
                    ws.g_t[b * db + j] = gvb;
                    // direct -1/B from the log-det term, plus the path
                    // through v_b = b * e^s + t
                    let gs = gvb * bp * e - inv_b;
                    ws.g_sraw[b * db + j] = gs * clamp_scale_deriv(self.clamp_alpha, sraw);
                    // overwrite g for the passive half: d loss / d b
                    ws.g_cur[b * d + da + j] = gvb * e;
                }
            }
            // backprop both nets; input gradients accumulate onto the
            // active half (which also receives the identity pass-through
            // already stored in g_cur[..da]).
            // W1 region of g_x must address rows of width da:
            // build a contiguous g_a scratch then merge.
            let mut g_a = vec![0.0; bsz * da];
            for b in 0..bsz {
                g_a[b * da..(b + 1) * da].copy_from_slice(&ws.g_cur[b * d..b * d + da]);
            }
            {
                let (gw1, rest) = s_grads.split_at_mut(s_off.1);
                let (gb1, rest) = rest.split_at_mut(s_off.2 - s_off.1);
                let (gw2, gb2) = rest.split_at_mut(s_off.3 - s_off.2);
                block.s_net.backward_batch(
                    &ws.cache_a[k],
                    &ws.cache_hs[k],
                    &ws.g_sraw,
                    bsz,
                    gw1,
                    gb1,
                    gw2,
                    gb2,
                    &mut g_a,
                    &mut ws.g_hidden,
                );
            }
            {
                let (gw1, rest) = t_grads.split_at_mut(s_off.1);
                let (gb1, rest) = rest.split_at_mut(s_off.2 - s_off.1);
                let (gw2, gb2) = rest.split_at_mut(s_off.3 - s_off.2);
                block.t_net.backward_batch(
                    &ws.cache_a[k],
                    &ws.cache_ht[k],
                    &ws.g_t,
                    bsz,
                    gw1,
                    gb1,
                    gw2,
                    gb2,
                    &mut g_a,
                    &mut ws.g_hidden,
                );
            }
            // undo the permutation: g_x[perm[i]] = g_u[i]
            for b in 0..bsz {
                let gu_a = &g_a[b * da..(b + 1) * da];
                for (i, &p) in block.perm.iter().enumerate() {
                    ws.g_next[b * d + p] = if i < da {
                        gu_a[i]
                    } else {
                        ws.g_cur[b * d + i]
                    };
                }
            }
            std::mem::swap(&mut ws.g_cur, &mut ws.g_next);
        }

        loss
    }

    // ── checkpoint I/O ──────────────────────────────────────────────────

    /// Flat text checkpoint: header, one permutation line per block, then
    /// every parameter in canonical order at 17 significant digits.
    /// Round-trips bit-exactly.
    pub fn to_checkpoint_string(&self) -> String {
        let mut out = String::new();
        out.push_str("flow-checkpoint v1\n");
        out.push_str(&format!("dim {}\n", self.dim));
        out.push_str(&format!("blocks {}\n", self.blocks.len()));
        out.push_str(&format!("hidden {}\n", self.hidden));
        out.push_str(&format!("clamp_alpha {}\n", fmt_g17(self.clamp_alpha)));
        out.push_str(&format!("trained_epochs {}\n", self.trained_epochs));
        for block in &self.blocks {
            out.push_str("perm");
            for &p in &block.perm {
                out.push_str(&format!(" {p}"));
            }
            out.push('\n');
        }
        let params = self.flat_params();
        out.push_str(&format!("params {}\n", params.len()));
        for p in &params {
            out.push_str(&fmt_g17(*p));
            out.push('\n');
        }
        out
    }

    pub fn save_checkpoint(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_checkpoint_string())?;
        Ok(())
    }

    pub fn load_checkpoint(path: &Path) -> Result<Self> {
        Self::from_checkpoint_string(&fs::read_to_string(path)?)
    }

    pub fn from_checkpoint_string(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        let mut expect = |want: &str| -> Result<(usize, String)> {
            let (idx, line) = lines
                .next()
                .ok_or_else(|| Error::parse(0, format!("unexpected end of checkpoint, wanted '{want}'")))?;
            let rest = line.strip_prefix(want).ok_or_else(|| {
                Error::parse(idx + 1, format!("expected '{want}', found '{line}'"))
            })?;
            Ok((idx + 1, rest.trim().to_string()))
        };

        expect("flow-checkpoint v1")?;
        let (l, dim) = expect("dim ")?;
        let dim: usize = dim.parse().map_err(|_| Error::parse(l, "invalid dim"))?;
        let (l, nblocks) = expect("blocks ")?;
        let nblocks: usize = nblocks
            .parse()
            .map_err(|_| Error::parse(l, "invalid block count"))?;
        let (l, hidden) = expect("hidden ")?;
        let hidden: usize = hidden
            .parse()
            .map_err(|_| Error::parse(l, "invalid hidden"))?;
        let (l, alpha) = expect("clamp_alpha ")?;
        let alpha: f64 = alpha
            .parse()
            .map_err(|_| Error::parse(l, "invalid clamp_alpha"))?;
        let (l, epochs) = expect("trained_epochs ")?;
        let trained_epochs: u64 = epochs
            .parse()
            .map_err(|_| Error::parse(l, "invalid trained_epochs"))?;

        let (da, db) = (active_len(dim), passive_len(dim));
        let mut blocks = Vec::with_capacity(nblocks);
        for _ in 0..nblocks {
            let (l, perm_text) = expect("perm")?;
            let perm: Vec<usize> = perm_text
                .split_whitespace()
                .map(|t| t.parse::<usize>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| Error::parse(l, "invalid permutation entry"))?;
            let mut seen = vec![false; dim];
            if perm.len() != dim || perm.iter().any(|&p| p >= dim || std::mem::replace(&mut seen[p], true)) {
                return Err(Error::parse(l, "permutation is not a bijection"));
            }
            blocks.push(CouplingBlock {
                perm,
                s_net: Mlp::zeros(da, hidden, db),
                t_net: Mlp::zeros(da, hidden, db),
            });
        }

        let (l, count) = expect("params ")?;
        let count: usize = count
            .parse()
            .map_err(|_| Error::parse(l, "invalid param count"))?;
        let mut params = Vec::with_capacity(count);
        for (idx, line) in lines {
            if line.is_empty() {
                continue;
            }
            let v: f64 = line
                .parse()
                .map_err(|_| Error::parse(idx + 1, format!("invalid parameter '{line}'")))?;
            if !v.is_finite() {
                return Err(Error::parse(idx + 1, "non-finite parameter"));
            }
            params.push(v);
        }
        if params.len() != count {
            return Err(Error::invalid(format!(
                "checkpoint declares {count} parameters, found {}",
                params.len()
            )));
        }
        let mut model = FlowModel {
            dim,
            hidden,
            clamp_alpha: alpha,
            blocks,
            trained_epochs,
        };
        model.set_flat_params(&params)?;
        Ok(model)
    }
}
