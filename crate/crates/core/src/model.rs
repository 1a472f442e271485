//! A small trainable masked-token scorer with dropout.
//!
//! Token + position embeddings feed two pre-norm encoder blocks
//! (single-head self-attention plus a tanh feed-forward); the output
//! projection is tied to the token embeddings and yields a full
//! distribution at the `[MASK]` position. Continuous-prompt
//! embeddings, when enabled, pass through a bidirectional recurrent
//! mixer whose output is added to the raw prompt embeddings before
//! insertion. A separate two-way classifier head over the `[CLS]`
//! representation serves the fine-tuning baseline.
//!
//! Forward and backward passes are written out by hand in f64 and
//! checked against central finite differences (`gradient_check`).
//! Training is single-threaded and bit-reproducible given (seed, data
//! order, spec); trained parameters are immutable afterwards and safe
//! to share across threads. Stochastic passes carry their own seed, so
//! concurrent MC passes are race-free by construction.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::data::MatchLabel;
use crate::eval::{self, Prf};
use crate::fmath;
use crate::seeds;
use crate::serialize::{SpecialToken, TokenSequence};

const NORM_EPS: f64 = 1e-5;

// Seed-stream tags for the trainer's stochastic sites.
const STREAM_SHUFFLE: u64 = 0xA1;
const STREAM_DROPOUT: u64 = 0xD0;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ModelError {
    #[error("sequence has no [MASK] position")]
    MissingMask,
    #[error("sequence must begin with [CLS]")]
    MissingCls,
    #[error("sequence length {len} exceeds max_len {max_len}")]
    SequenceTooLong { len: usize, max_len: usize },
    #[error("token id {id} outside vocabulary of size {size}")]
    TokenOutOfVocab { id: u32, size: usize },
    #[error("prompt token {k} but model has {available} prompt embeddings")]
    PromptTokenUnavailable { k: usize, available: usize },
    #[error("label word id {id} outside distribution support {size}")]
    WordOutOfSupport { id: u32, size: usize },
    #[error("degenerate verbalizer mass: both class scores are zero")]
    DegenerateScores,
    #[error("training set is empty")]
    EmptyTrainingSet,
    #[error("non-finite loss at batch index {batch_index}")]
    NonFiniteLoss { batch_index: usize },
}

/// Row-major matrix; 1-row tensors double as bias/gain vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct Mat {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Mat { rows, cols, data: vec![value; rows * cols] }
    }

    fn uniform(rows: usize, cols: usize, limit: f64, rng: &mut ChaCha20Rng) -> Self {
        let data = (0..rows * cols).map(|_| (rng.gen::<f64>() * 2.0 - 1.0) * limit).collect();
        Mat { rows, cols, data }
    }

    fn xavier(rows: usize, cols: usize, rng: &mut ChaCha20Rng) -> Self {
        let limit = fmath::sqrt(6.0 / (rows + cols) as f64);
        Self::uniform(rows, cols, limit, rng)
    }

    /// Random orthogonal matrix via modified Gram-Schmidt.
    fn orthogonal(n: usize, rng: &mut ChaCha20Rng) -> Self {
        let mut m = Self::uniform(n, n, 1.0, rng);
        for i in 0..n {
            for j in 0..i {
                let proj = dot(m.row(i), m.row(j));
                let prev = m.row(j).to_vec();
                add_scaled(m.row_mut(i), &prev, -proj);
            }
            let norm = fmath::sqrt(dot(m.row(i), m.row(i)));
            if norm < 1e-12 {
                // Vanishingly unlikely; re-draw keeps determinism.
                for v in m.row_mut(i) {
                    *v = rng.gen::<f64>() * 2.0 - 1.0;
                }
                let norm = fmath::sqrt(dot(m.row(i), m.row(i)));
                for v in m.row_mut(i) {
                    *v /= norm;
                }
            } else {
                for v in m.row_mut(i) {
                    *v /= norm;
                }
            }
        }
        m
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn add_scaled(out: &mut [f64], x: &[f64], s: f64) {
    for (o, v) in out.iter_mut().zip(x) {
        *o += s * v;
    }
}

/// y = W x (W: out x in).
fn matvec(w: &Mat, x: &[f64]) -> Vec<f64> {
    (0..w.rows).map(|o| dot(w.row(o), x)).collect()
}

/// x += W^T y.
fn matvec_t_acc(w: &Mat, y: &[f64], x: &mut [f64]) {
    for (o, &dy) in y.iter().enumerate() {
        if dy != 0.0 {
            add_scaled(x, w.row(o), dy);
        }
    }
}

/// G += y (outer) x.
fn outer_acc(g: &mut Mat, y: &[f64], x: &[f64]) {
    for (o, &dy) in y.iter().enumerate() {
        if dy != 0.0 {
            add_scaled(g.row_mut(o), x, dy);
        }
    }
}

fn softmax_in_place(x: &mut [f64]) {
    let max = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in x.iter_mut() {
        *v = fmath::exp(*v - max);
        sum += *v;
    }
    for v in x.iter_mut() {
        *v /= sum;
    }
}

/// Model shape, fixed at construction. Prompt embeddings and the
/// mixer exist iff `n_prompt_tokens > 0` (continuous templates).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub d_model: usize,
    pub n_blocks: usize,
    pub ffn_hidden: usize,
    pub max_len: usize,
    pub n_prompt_tokens: usize,
    pub dropout_rate: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            vocab_size: 0,
            d_model: 64,
            n_blocks: 2,
            ffn_hidden: 128,
            max_len: 512,
            n_prompt_tokens: 0,
            dropout_rate: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockParams {
    pub wq: Mat,
    pub wk: Mat,
    pub wv: Mat,
    pub wo: Mat,
    pub norm1: Mat,
    pub w1: Mat,
    pub b1: Mat,
    pub w2: Mat,
    pub b2: Mat,
    pub norm2: Mat,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PromptParams {
    /// Raw continuous prompt embeddings (phi).
    pub phi: Mat,
    pub mix_wf: Mat,
    pub mix_uf: Mat,
    pub mix_bf: Mat,
    pub mix_wb: Mat,
    pub mix_ub: Mat,
    pub mix_bb: Mat,
    pub mix_proj: Mat,
    pub mix_proj_b: Mat,
}

/// All trainable tensors. The same type doubles as the gradient and
/// optimizer-moment buffers via [`ModelParameters::zeros_like`].
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParameters {
    pub cfg: ModelConfig,
    pub tok_emb: Mat,
    pub pos_emb: Mat,
    pub blocks: Vec<BlockParams>,
    pub final_norm: Mat,
    pub cls_w: Mat,
    pub cls_b: Mat,
    pub prompt: Option<PromptParams>,
}

impl ModelParameters {
    /// Fresh random initialization: uniform(-0.05, 0.05) embeddings,
    /// orthogonal recurrent weights, zero biases, unit norm gains.
    pub fn init(cfg: &ModelConfig, seed: u64) -> Self {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let d = cfg.d_model;
        let h = cfg.ffn_hidden;
        let tok_emb = Mat::uniform(cfg.vocab_size, d, 0.05, &mut rng);
        let pos_emb = Mat::uniform(cfg.max_len, d, 0.05, &mut rng);
        let blocks = (0..cfg.n_blocks)
            .map(|_| BlockParams {
                wq: Mat::xavier(d, d, &mut rng),
                wk: Mat::xavier(d, d, &mut rng),
                wv: Mat::xavier(d, d, &mut rng),
                wo: Mat::xavier(d, d, &mut rng),
                norm1: Mat::filled(1, d, 1.0),
                w1: Mat::xavier(h, d, &mut rng),
                b1: Mat::zeros(1, h),
                w2: Mat::xavier(d, h, &mut rng),
                b2: Mat::zeros(1, d),
                norm2: Mat::filled(1, d, 1.0),
            })
            .collect();
        let final_norm = Mat::filled(1, d, 1.0);
        let cls_w = Mat::xavier(2, d, &mut rng);
        let cls_b = Mat::zeros(1, 2);
        let prompt = (cfg.n_prompt_tokens > 0).then(|| PromptParams {
            phi: Mat::uniform(cfg.n_prompt_tokens, d, 0.05, &mut rng),
            mix_wf: Mat::xavier(d, d, &mut rng),
            mix_uf: Mat::orthogonal(d, &mut rng),
            mix_bf: Mat::zeros(1, d),
            mix_wb: Mat::xavier(d, d, &mut rng),
            mix_ub: Mat::orthogonal(d, &mut rng),
            mix_bb: Mat::zeros(1, d),
            mix_proj: Mat::xavier(d, 2 * d, &mut rng),
            mix_proj_b: Mat::zeros(1, d),
        });
        ModelParameters {
            cfg: cfg.clone(),
            tok_emb,
            pos_emb,
            blocks,
            final_norm,
            cls_w,
            cls_b,
            prompt,
        }
    }

    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for (_, t) in z.tensors_mut() {
            t.data.iter_mut().for_each(|v| *v = 0.0);
        }
        z
    }

    /// Refills every tensor with uniform(-limit, limit) values. Used
    /// to build well-conditioned random instances for the gradient
    /// checker (the production init's tiny embeddings sit close to the
    /// RMS-norm singularity, which inflates finite-difference
    /// truncation error without being a gradient defect).
    pub fn randomize_uniform(&mut self, limit: f64, seed: u64) {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        for (_, t) in self.tensors_mut() {
            for v in t.data.iter_mut() {
                *v = (rng.gen::<f64>() * 2.0 - 1.0) * limit;
            }
        }
    }

    /// Named tensors in a fixed traversal order shared by the
    /// optimizer, checkpoints, and the gradient checker.
    pub fn tensors(&self) -> Vec<(String, &Mat)> {
        let mut out: Vec<(String, &Mat)> = Vec::new();
        out.push(("tok_emb".into(), &self.tok_emb));
        out.push(("pos_emb".into(), &self.pos_emb));
        for (i, b) in self.blocks.iter().enumerate() {
            out.push((alloc::format!("block{i}.wq"), &b.wq));
            out.push((alloc::format!("block{i}.wk"), &b.wk));
            out.push((alloc::format!("block{i}.wv"), &b.wv));
            out.push((alloc::format!("block{i}.wo"), &b.wo));
            out.push((alloc::format!("block{i}.norm1"), &b.norm1));
            out.push((alloc::format!("block{i}.w1"), &b.w1));
            out.push((alloc::format!("block{i}.b1"), &b.b1));
            out.push((alloc::format!("block{i}.w2"), &b.w2));
            out.push((alloc::format!("block{i}.b2"), &b.b2));
            out.push((alloc::format!("block{i}.norm2"), &b.norm2));
        }
        out.push(("final_norm".into(), &self.final_norm));
        out.push(("cls_w".into(), &self.cls_w));
        out.push(("cls_b".into(), &self.cls_b));
        if let Some(p) = &self.prompt {
            out.push(("prompt.phi".into(), &p.phi));
            out.push(("prompt.mix_wf".into(), &p.mix_wf));
            out.push(("prompt.mix_uf".into(), &p.mix_uf));
            out.push(("prompt.mix_bf".into(), &p.mix_bf));
            out.push(("prompt.mix_wb".into(), &p.mix_wb));
            out.push(("prompt.mix_ub".into(), &p.mix_ub));
            out.push(("prompt.mix_bb".into(), &p.mix_bb));
            out.push(("prompt.mix_proj".into(), &p.mix_proj));
            out.push(("prompt.mix_proj_b".into(), &p.mix_proj_b));
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<(String, &mut Mat)> {
        let mut out: Vec<(String, &mut Mat)> = Vec::new();
        out.push(("tok_emb".into(), &mut self.tok_emb));
        out.push(("pos_emb".into(), &mut self.pos_emb));
        for (i, b) in self.blocks.iter_mut().enumerate() {
            out.push((alloc::format!("block{i}.wq"), &mut b.wq));
            out.push((alloc::format!("block{i}.wk"), &mut b.wk));
            out.push((alloc::format!("block{i}.wv"), &mut b.wv));
            out.push((alloc::format!("block{i}.wo"), &mut b.wo));
            out.push((alloc::format!("block{i}.norm1"), &mut b.norm1));
            out.push((alloc::format!("block{i}.w1"), &mut b.w1));
            out.push((alloc::format!("block{i}.b1"), &mut b.b1));
            out.push((alloc::format!("block{i}.w2"), &mut b.w2));
            out.push((alloc::format!("block{i}.b2"), &mut b.b2));
            out.push((alloc::format!("block{i}.norm2"), &mut b.norm2));
        }
        out.push(("final_norm".into(), &mut self.final_norm));
        out.push(("cls_w".into(), &mut self.cls_w));
        out.push(("cls_b".into(), &mut self.cls_b));
        if let Some(p) = &mut self.prompt {
            out.push(("prompt.phi".into(), &mut p.phi));
            out.push(("prompt.mix_wf".into(), &mut p.mix_wf));
            out.push(("prompt.mix_uf".into(), &mut p.mix_uf));
            out.push(("prompt.mix_bf".into(), &mut p.mix_bf));
            out.push(("prompt.mix_wb".into(), &mut p.mix_wb));
            out.push(("prompt.mix_ub".into(), &mut p.mix_ub));
            out.push(("prompt.mix_bb".into(), &mut p.mix_bb));
            out.push(("prompt.mix_proj".into(), &mut p.mix_proj));
            out.push(("prompt.mix_proj_b".into(), &mut p.mix_proj_b));
        }
        out
    }
}

/// Forward-pass mode. Stochastic applies seeded dropout at the sites
/// after the embedding sum and after each encoder block.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ForwardMode {
    Deterministic,
    Stochastic { seed: u64 },
}

struct NormIo {
    ri: f64,
}

struct BlockTrace {
    xn1: Vec<f64>,
    ri1: Vec<f64>,
    q: Vec<f64>,
    k: Vec<f64>,
    v: Vec<f64>,
    att: Vec<f64>,
    ctx: Vec<f64>,
    a: Vec<f64>,
    xn2: Vec<f64>,
    ri2: Vec<f64>,
    t: Vec<f64>,
}

struct MixerTrace {
    fwd_h: Vec<Vec<f64>>,
    bwd_h: Vec<Vec<f64>>,
    mixed: Vec<Vec<f64>>,
}

struct Trace {
    n: usize,
    ids: Vec<u32>,
    prompt_slots: Vec<Option<usize>>,
    drop_masks: Vec<Option<Vec<f64>>>,
    /// xs[0] = embeddings after site-0 dropout; xs[b+1] = output of
    /// block b after its dropout site. Length n_blocks + 1.
    xs: Vec<Vec<f64>>,
    blocks: Vec<BlockTrace>,
    mixer: Option<MixerTrace>,
}

fn rms_norm(x: &[f64], gain: &[f64], out: &mut [f64]) -> NormIo {
    let d = x.len() as f64;
    let ms = dot(x, x) / d;
    let ri = 1.0 / fmath::sqrt(ms + NORM_EPS);
    for ((o, &xv), &g) in out.iter_mut().zip(x).zip(gain) {
        *o = g * xv * ri;
    }
    NormIo { ri }
}

/// Backward of `rms_norm`: accumulates into dx and dgain.
fn rms_norm_bwd(dxn: &[f64], x: &[f64], ri: f64, gain: &[f64], dx: &mut [f64], dgain: &mut [f64]) {
    let d = x.len() as f64;
    let mut dot_gx = 0.0;
    for i in 0..x.len() {
        dot_gx += gain[i] * dxn[i] * x[i];
    }
    let k = ri * ri * ri / d * dot_gx;
    for i in 0..x.len() {
        dx[i] += ri * gain[i] * dxn[i] - k * x[i];
        dgain[i] += dxn[i] * x[i] * ri;
    }
}

fn dropout_mask(len: usize, rate: f64, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let scale = 1.0 / (1.0 - rate);
    (0..len).map(|_| if rng.gen::<f64>() < rate { 0.0 } else { scale }).collect()
}

fn mixer_forward(p: &PromptParams) -> MixerTrace {
    let n = p.phi.rows;
    let d = p.phi.cols;
    let mut fwd_h: Vec<Vec<f64>> = Vec::with_capacity(n);
    for k in 0..n {
        let mut pre = matvec(&p.mix_wf, p.phi.row(k));
        if k > 0 {
            let prev = fwd_h[k - 1].clone();
            for (o, v) in pre.iter_mut().zip(matvec(&p.mix_uf, &prev)) {
                *o += v;
            }
        }
        add_scaled(&mut pre, p.mix_bf.row(0), 1.0);
        fwd_h.push(pre.into_iter().map(fmath::tanh).collect());
    }
    let mut bwd_h: Vec<Vec<f64>> = vec![Vec::new(); n];
    for k in (0..n).rev() {
        let mut pre = matvec(&p.mix_wb, p.phi.row(k));
        if k + 1 < n {
            let next = bwd_h[k + 1].clone();
            for (o, v) in pre.iter_mut().zip(matvec(&p.mix_ub, &next)) {
                *o += v;
            }
        }
        add_scaled(&mut pre, p.mix_bb.row(0), 1.0);
        bwd_h[k] = pre.into_iter().map(fmath::tanh).collect();
    }
    let mixed = (0..n)
        .map(|k| {
            let mut cat = fwd_h[k].clone();
            cat.extend_from_slice(&bwd_h[k]);
            let mut m = matvec(&p.mix_proj, &cat);
            add_scaled(&mut m, p.mix_proj_b.row(0), 1.0);
            add_scaled(&mut m, p.phi.row(k), 1.0);
            debug_assert_eq!(m.len(), d);
            m
        })
        .collect();
    MixerTrace { fwd_h, bwd_h, mixed }
}

fn mixer_backward(p: &PromptParams, trace: &MixerTrace, d_mixed: &[Vec<f64>], g: &mut PromptParams) {
    let n = p.phi.rows;
    let d = p.phi.cols;
    let mut d_fh = vec![vec![0.0; d]; n];
    let mut d_bh = vec![vec![0.0; d]; n];
    for k in 0..n {
        add_scaled(g.phi.row_mut(k), &d_mixed[k], 1.0);
        add_scaled(g.mix_proj_b.row_mut(0), &d_mixed[k], 1.0);
        let mut cat = trace.fwd_h[k].clone();
        cat.extend_from_slice(&trace.bwd_h[k]);
        outer_acc(&mut g.mix_proj, &d_mixed[k], &cat);
        let mut d_cat = vec![0.0; 2 * d];
        matvec_t_acc(&p.mix_proj, &d_mixed[k], &mut d_cat);
        add_scaled(&mut d_fh[k], &d_cat[..d], 1.0);
        add_scaled(&mut d_bh[k], &d_cat[d..], 1.0);
    }
    for k in (0..n).rev() {
        let d_pre: Vec<f64> =
            d_fh[k].iter().zip(&trace.fwd_h[k]).map(|(&g, &h)| g * (1.0 - h * h)).collect();
        add_scaled(g.mix_bf.row_mut(0), &d_pre, 1.0);
        outer_acc(&mut g.mix_wf, &d_pre, p.phi.row(k));
        matvec_t_acc(&p.mix_wf, &d_pre, g.phi.row_mut(k));
        if k > 0 {
            outer_acc(&mut g.mix_uf, &d_pre, &trace.fwd_h[k - 1]);
            let mut carry = vec![0.0; d];
            matvec_t_acc(&p.mix_uf, &d_pre, &mut carry);
            add_scaled(&mut d_fh[k - 1], &carry, 1.0);
        }
    }
    for k in 0..n {
        let d_pre: Vec<f64> =
            d_bh[k].iter().zip(&trace.bwd_h[k]).map(|(&g, &h)| g * (1.0 - h * h)).collect();
        add_scaled(g.mix_bb.row_mut(0), &d_pre, 1.0);
        outer_acc(&mut g.mix_wb, &d_pre, p.phi.row(k));
        matvec_t_acc(&p.mix_wb, &d_pre, g.phi.row_mut(k));
        if k + 1 < n {
            outer_acc(&mut g.mix_ub, &d_pre, &trace.bwd_h[k + 1]);
            let mut carry = vec![0.0; d];
            matvec_t_acc(&p.mix_ub, &d_pre, &mut carry);
            add_scaled(&mut d_bh[k + 1], &carry, 1.0);
        }
    }
}

fn prompt_slot(id: u32) -> Option<usize> {
    SpecialToken::from_id(id).and_then(|s| match s {
        SpecialToken::Prompt(k) => Some(k),
        _ => None,
    })
}

fn forward_trunk(params: &ModelParameters, seq: &TokenSequence, mode: ForwardMode) -> Result<Trace, ModelError> {
    let cfg = &params.cfg;
    let n = seq.ids.len();
    let d = cfg.d_model;
    if n > cfg.max_len {
        return Err(ModelError::SequenceTooLong { len: n, max_len: cfg.max_len });
    }
    let mut prompt_slots = Vec::with_capacity(n);
    for &id in &seq.ids {
        if (id as usize) >= cfg.vocab_size {
            return Err(ModelError::TokenOutOfVocab { id, size: cfg.vocab_size });
        }
        let slot = prompt_slot(id);
        if let Some(k) = slot {
            let available = params.prompt.as_ref().map(|p| p.phi.rows).unwrap_or(0);
            if k >= available {
                return Err(ModelError::PromptTokenUnavailable { k, available });
            }
        }
        prompt_slots.push(slot);
    }

    let mixer = if prompt_slots.iter().any(|s| s.is_some()) {
        Some(mixer_forward(params.prompt.as_ref().expect("prompt params checked")))
    } else {
        None
    };

    let n_sites = cfg.n_blocks + 1;
    let mut drop_masks: Vec<Option<Vec<f64>>> = vec![None; n_sites];
    if let ForwardMode::Stochastic { seed } = mode {
        if cfg.dropout_rate > 0.0 {
            for (site, slot) in drop_masks.iter_mut().enumerate() {
                *slot = Some(dropout_mask(n * d, cfg.dropout_rate, seeds::mix2(seed, site as u64)));
            }
        }
    }

    let mut x = vec![0.0; n * d];
    for p in 0..n {
        let base: &[f64] = match prompt_slots[p] {
            Some(k) => &mixer.as_ref().expect("mixer present").mixed[k],
            None => params.tok_emb.row(seq.ids[p] as usize),
        };
        let row = &mut x[p * d..(p + 1) * d];
        row.copy_from_slice(base);
        add_scaled(row, params.pos_emb.row(p), 1.0);
    }
    if let Some(mask) = &drop_masks[0] {
        for (v, m) in x.iter_mut().zip(mask) {
            *v *= m;
        }
    }

    let scale = 1.0 / fmath::sqrt(d as f64);
    let mut xs = Vec::with_capacity(cfg.n_blocks + 1);
    xs.push(x);
    let mut blocks = Vec::with_capacity(cfg.n_blocks);
    for (bi, bp) in params.blocks.iter().enumerate() {
        let x = xs[bi].clone();
        let mut xn1 = vec![0.0; n * d];
        let mut ri1 = vec![0.0; n];
        for p in 0..n {
            let io = rms_norm(&x[p * d..(p + 1) * d], bp.norm1.row(0), &mut xn1[p * d..(p + 1) * d]);
            ri1[p] = io.ri;
        }
        let mut q = vec![0.0; n * d];
        let mut k = vec![0.0; n * d];
        let mut v = vec![0.0; n * d];
        for p in 0..n {
            let xp = &xn1[p * d..(p + 1) * d];
            q[p * d..(p + 1) * d].copy_from_slice(&matvec(&bp.wq, xp));
            k[p * d..(p + 1) * d].copy_from_slice(&matvec(&bp.wk, xp));
            v[p * d..(p + 1) * d].copy_from_slice(&matvec(&bp.wv, xp));
        }
        let mut att = vec![0.0; n * n];
        for i in 0..n {
            let qi = &q[i * d..(i + 1) * d];
            let row = &mut att[i * n..(i + 1) * n];
            for j in 0..n {
                row[j] = dot(qi, &k[j * d..(j + 1) * d]) * scale;
            }
            softmax_in_place(row);
        }
        let mut ctx = vec![0.0; n * d];
        for i in 0..n {
            let row = &mut ctx[i * d..(i + 1) * d];
            for j in 0..n {
                let w = att[i * n + j];
                if w != 0.0 {
                    add_scaled(row, &v[j * d..(j + 1) * d], w);
                }
            }
        }
        let mut a = x.clone();
        for p in 0..n {
            let out = matvec(&bp.wo, &ctx[p * d..(p + 1) * d]);
            add_scaled(&mut a[p * d..(p + 1) * d], &out, 1.0);
        }
        let mut xn2 = vec![0.0; n * d];
        let mut ri2 = vec![0.0; n];
        for p in 0..n {
            let io = rms_norm(&a[p * d..(p + 1) * d], bp.norm2.row(0), &mut xn2[p * d..(p + 1) * d]);
            ri2[p] = io.ri;
        }
        let h = cfg.ffn_hidden;
        let mut t = vec![0.0; n * h];
        let mut f = a.clone();
        for p in 0..n {
            let mut pre = matvec(&bp.w1, &xn2[p * d..(p + 1) * d]);
            add_scaled(&mut pre, bp.b1.row(0), 1.0);
            let tp = &mut t[p * h..(p + 1) * h];
            for (o, v) in tp.iter_mut().zip(pre) {
                *o = fmath::tanh(v);
            }
            let mut out = matvec(&bp.w2, tp);
            add_scaled(&mut out, bp.b2.row(0), 1.0);
            add_scaled(&mut f[p * d..(p + 1) * d], &out, 1.0);
        }
        if let Some(mask) = &drop_masks[bi + 1] {
            for (v, m) in f.iter_mut().zip(mask) {
                *v *= m;
            }
        }
        xs.push(f);
        blocks.push(BlockTrace { xn1, ri1, q, k, v, att, ctx, a, xn2, ri2, t });
    }

    Ok(Trace { n, ids: seq.ids.clone(), prompt_slots, drop_masks, xs, blocks, mixer })
}

/// Final-normed representation at one position.
fn readout(params: &ModelParameters, trace: &Trace, pos: usize) -> (Vec<f64>, f64) {
    let d = params.cfg.d_model;
    let x = &trace.xs[trace.blocks.len()][pos * d..(pos + 1) * d];
    let mut h = vec![0.0; d];
    let io = rms_norm(x, params.final_norm.row(0), &mut h);
    (h, io.ri)
}

/// Distribution over the vocabulary at the mask position. Sums to one
/// within 1e-6; deterministic mode is dropout-free and repeatable.
pub fn forward_mask(params: &ModelParameters, seq: &TokenSequence, mode: ForwardMode) -> Result<Vec<f64>, ModelError> {
    let pos = seq.mask_position.ok_or(ModelError::MissingMask)?;
    let trace = forward_trunk(params, seq, mode)?;
    let (h, _) = readout(params, &trace, pos);
    let mut logits = matvec(&params.tok_emb, &h);
    softmax_in_place(&mut logits);
    Ok(logits)
}

/// Two-class probabilities from the `[CLS]` head.
pub fn forward_cls(params: &ModelParameters, seq: &TokenSequence, mode: ForwardMode) -> Result<[f64; 2], ModelError> {
    if seq.ids.first() != Some(&SpecialToken::Cls.id()) {
        return Err(ModelError::MissingCls);
    }
    let trace = forward_trunk(params, seq, mode)?;
    let (h, _) = readout(params, &trace, 0);
    let mut logits = matvec(&params.cls_w, &h);
    add_scaled(&mut logits, params.cls_b.row(0), 1.0);
    softmax_in_place(&mut logits);
    Ok([logits[0], logits[1]])
}

/// Label-word ids per class (index 0 = mismatched, 1 = matched).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassWords {
    pub ids: [Vec<u32>; 2],
}

/// Mean mask probability of each class's label words: the cloze class
/// score. Scores need not sum to one.
pub fn mean_class_scores(mask_dist: &[f64], words: &ClassWords) -> Result<[f64; 2], ModelError> {
    let mut scores = [0.0; 2];
    for c in 0..2 {
        let ids = &words.ids[c];
        debug_assert!(!ids.is_empty());
        let mut sum = 0.0;
        for &id in ids {
            let p = mask_dist
                .get(id as usize)
                .ok_or(ModelError::WordOutOfSupport { id, size: mask_dist.len() })?;
            sum += p;
        }
        scores[c] = sum / ids.len() as f64;
    }
    Ok(scores)
}

/// Scores normalized to a 2-class distribution.
pub fn normalize_scores(scores: [f64; 2]) -> Result<[f64; 2], ModelError> {
    let sum = scores[0] + scores[1];
    if !(sum > 0.0) || !sum.is_finite() {
        return Err(ModelError::DegenerateScores);
    }
    Ok([scores[0] / sum, scores[1] / sum])
}

/// Argmax label; exact ties go to mismatched.
pub fn scores_to_label(scores: [f64; 2]) -> MatchLabel {
    if scores[1] > scores[0] {
        MatchLabel::Matched
    } else {
        MatchLabel::Mismatched
    }
}

/// Which loss/scoring route the model runs: cloze scoring through the
/// verbalizer words, or the `[CLS]` classification baseline.
#[derive(Debug, Clone, Copy)]
pub enum LossMode<'a> {
    Prompt(&'a ClassWords),
    Cls,
}

/// Normalized 2-class probabilities for one sequence under the given
/// scoring route.
pub fn predict_probs(
    params: &ModelParameters,
    seq: &TokenSequence,
    loss: LossMode<'_>,
    mode: ForwardMode,
) -> Result<[f64; 2], ModelError> {
    match loss {
        LossMode::Prompt(words) => {
            let dist = forward_mask(params, seq, mode)?;
            normalize_scores(mean_class_scores(&dist, words)?)
        }
        LossMode::Cls => forward_cls(params, seq, mode),
    }
}

/// Cross-entropy loss and gradients for one example, accumulated into
/// `grads` (shapes must match `params`). Returns the loss.
fn loss_grad_into(
    params: &ModelParameters,
    seq: &TokenSequence,
    label: MatchLabel,
    loss: LossMode<'_>,
    mode: ForwardMode,
    grads: &mut ModelParameters,
) -> Result<f64, ModelError> {
    let cfg = &params.cfg;
    let d = cfg.d_model;
    let trace;
    let pos;
    let ri_f;
    let loss_value;
    let mut dh = vec![0.0; d];
    match loss {
        LossMode::Prompt(words) => {
            pos = seq.mask_position.ok_or(ModelError::MissingMask)?;
            trace = forward_trunk(params, seq, mode)?;
            let (hh, ri) = readout(params, &trace, pos);
            let mut dist = matvec(&params.tok_emb, &hh);
            softmax_in_place(&mut dist);
            let scores = mean_class_scores(&dist, words)?;
            let total = scores[0] + scores[1];
            let sy = scores[label.index()];
            if !(sy > 0.0) || !total.is_finite() {
                return Err(ModelError::DegenerateScores);
            }
            loss_value = fmath::ln(total) - fmath::ln(sy);

            // d loss / d score_c, then fan out over that class's words.
            let mut d_scores = [1.0 / total, 1.0 / total];
            d_scores[label.index()] -= 1.0 / sy;
            let mut g = vec![0.0; cfg.vocab_size];
            for c in 0..2 {
                let m = words.ids[c].len() as f64;
                for &id in &words.ids[c] {
                    g[id as usize] += d_scores[c] / m;
                }
            }
            let g_dot_p: f64 = g.iter().zip(&dist).map(|(gv, pv)| gv * pv).sum();
            // Softmax backward, then the tied projection: both the
            // readout and the embedding rows receive gradient.
            let mut dz = dist;
            for (z, gv) in dz.iter_mut().zip(&g) {
                *z *= gv - g_dot_p;
            }
            for (v, &dzv) in dz.iter().enumerate() {
                if dzv != 0.0 {
                    add_scaled(grads.tok_emb.row_mut(v), &hh, dzv);
                    add_scaled(&mut dh, params.tok_emb.row(v), dzv);
                }
            }
            ri_f = ri;
        }
        LossMode::Cls => {
            if seq.ids.first() != Some(&SpecialToken::Cls.id()) {
                return Err(ModelError::MissingCls);
            }
            pos = 0;
            trace = forward_trunk(params, seq, mode)?;
            let (hh, ri) = readout(params, &trace, pos);
            let mut probs = matvec(&params.cls_w, &hh);
            add_scaled(&mut probs, params.cls_b.row(0), 1.0);
            softmax_in_place(&mut probs);
            let py = probs[label.index()];
            if !(py > 0.0) {
                return Err(ModelError::DegenerateScores);
            }
            loss_value = -fmath::ln(py);
            let mut dlogits = probs;
            dlogits[label.index()] -= 1.0;
            add_scaled(grads.cls_b.row_mut(0), &dlogits, 1.0);
            outer_acc(&mut grads.cls_w, &dlogits, &hh);
            matvec_t_acc(&params.cls_w, &dlogits, &mut dh);
            ri_f = ri;
        }
    }

    let n = trace.n;
    let n_blocks = trace.blocks.len();
    // Final norm at the readout position.
    let mut dx = vec![0.0; n * d];
    {
        let x_last = &trace.xs[n_blocks][pos * d..(pos + 1) * d];
        rms_norm_bwd(
            &dh,
            x_last,
            ri_f,
            params.final_norm.row(0),
            &mut dx[pos * d..(pos + 1) * d],
            grads.final_norm.row_mut(0),
        );
    }

    let scale = 1.0 / fmath::sqrt(d as f64);
    let hdim = cfg.ffn_hidden;
    for bi in (0..n_blocks).rev() {
        let bp = &params.blocks[bi];
        let bt = &trace.blocks[bi];
        let gb = &mut grads.blocks[bi];
        if let Some(mask) = &trace.drop_masks[bi + 1] {
            for (v, m) in dx.iter_mut().zip(mask) {
                *v *= m;
            }
        }
        // FFN sublayer: f = a + w2 tanh(w1 xn2 + b1) + b2.
        let mut da = dx.clone();
        for p in 0..n {
            let df = &dx[p * d..(p + 1) * d];
            add_scaled(gb.b2.row_mut(0), df, 1.0);
            let tp = &bt.t[p * hdim..(p + 1) * hdim];
            outer_acc(&mut gb.w2, df, tp);
            let mut dt = vec![0.0; hdim];
            matvec_t_acc(&bp.w2, df, &mut dt);
            for (dv, &tv) in dt.iter_mut().zip(tp) {
                *dv *= 1.0 - tv * tv;
            }
            add_scaled(gb.b1.row_mut(0), &dt, 1.0);
            outer_acc(&mut gb.w1, &dt, &bt.xn2[p * d..(p + 1) * d]);
            let mut dxn2 = vec![0.0; d];
            matvec_t_acc(&bp.w1, &dt, &mut dxn2);
            rms_norm_bwd(
                &dxn2,
                &bt.a[p * d..(p + 1) * d],
                bt.ri2[p],
                bp.norm2.row(0),
                &mut da[p * d..(p + 1) * d],
                gb.norm2.row_mut(0),
            );
        }
        // Attention sublayer: a = x + wo ctx.
        let mut dx_prev = da.clone();
        let mut dctx = vec![0.0; n * d];
        for p in 0..n {
            let dap = &da[p * d..(p + 1) * d];
            outer_acc(&mut gb.wo, dap, &bt.ctx[p * d..(p + 1) * d]);
            matvec_t_acc(&bp.wo, dap, &mut dctx[p * d..(p + 1) * d]);
        }
        let mut dq = vec![0.0; n * d];
        let mut dk = vec![0.0; n * d];
        let mut dv = vec![0.0; n * d];
        let mut datt = vec![0.0; n];
        for i in 0..n {
            let dci = &dctx[i * d..(i + 1) * d];
            let att_row = &bt.att[i * n..(i + 1) * n];
            for j in 0..n {
                datt[j] = dot(dci, &bt.v[j * d..(j + 1) * d]);
                add_scaled(&mut dv[j * d..(j + 1) * d], dci, att_row[j]);
            }
            let dot_ad: f64 = att_row.iter().zip(&datt).map(|(a, g)| a * g).sum();
            for j in 0..n {
                let ds = att_row[j] * (datt[j] - dot_ad) * scale;
                if ds != 0.0 {
                    add_scaled(&mut dq[i * d..(i + 1) * d], &bt.k[j * d..(j + 1) * d], ds);
                    add_scaled(&mut dk[j * d..(j + 1) * d], &bt.q[i * d..(i + 1) * d], ds);
                }
            }
        }
        for p in 0..n {
            let xn1p = &bt.xn1[p * d..(p + 1) * d];
            let mut dxn1 = vec![0.0; d];
            outer_acc(&mut gb.wq, &dq[p * d..(p + 1) * d], xn1p);
            matvec_t_acc(&bp.wq, &dq[p * d..(p + 1) * d], &mut dxn1);
            outer_acc(&mut gb.wk, &dk[p * d..(p + 1) * d], xn1p);
            matvec_t_acc(&bp.wk, &dk[p * d..(p + 1) * d], &mut dxn1);
            outer_acc(&mut gb.wv, &dv[p * d..(p + 1) * d], xn1p);
            matvec_t_acc(&bp.wv, &dv[p * d..(p + 1) * d], &mut dxn1);
            rms_norm_bwd(
                &dxn1,
                &trace.xs[bi][p * d..(p + 1) * d],
                bt.ri1[p],
                bp.norm1.row(0),
                &mut dx_prev[p * d..(p + 1) * d],
                gb.norm1.row_mut(0),
            );
        }
        dx = dx_prev;
    }

    if let Some(mask) = &trace.drop_masks[0] {
        for (v, m) in dx.iter_mut().zip(mask) {
            *v *= m;
        }
    }
    let mut d_mixed: Vec<Vec<f64>> = match &trace.mixer {
        Some(m) => vec![vec![0.0; d]; m.mixed.len()],
        None => Vec::new(),
    };
    for p in 0..n {
        let row = &dx[p * d..(p + 1) * d];
        add_scaled(grads.pos_emb.row_mut(p), row, 1.0);
        match trace.prompt_slots[p] {
            Some(k) => add_scaled(&mut d_mixed[k], row, 1.0),
            None => add_scaled(grads.tok_emb.row_mut(trace.ids[p] as usize), row, 1.0),
        }
    }
    if let Some(mt) = &trace.mixer {
        mixer_backward(
            params.prompt.as_ref().expect("prompt params"),
            mt,
            &d_mixed,
            grads.prompt.as_mut().expect("prompt grads"),
        );
    }
    Ok(loss_value)
}

/// Forward-only cross-entropy loss of one example.
fn example_loss(
    params: &ModelParameters,
    seq: &TokenSequence,
    label: MatchLabel,
    loss: LossMode<'_>,
    mode: ForwardMode,
) -> Result<f64, ModelError> {
    match loss {
        LossMode::Prompt(words) => {
            let dist = forward_mask(params, seq, mode)?;
            let scores = mean_class_scores(&dist, words)?;
            let total = scores[0] + scores[1];
            let sy = scores[label.index()];
            if !(sy > 0.0) || !total.is_finite() {
                return Err(ModelError::DegenerateScores);
            }
            Ok(fmath::ln(total) - fmath::ln(sy))
        }
        LossMode::Cls => {
            let probs = forward_cls(params, seq, mode)?;
            let py = probs[label.index()];
            if !(py > 0.0) {
                return Err(ModelError::DegenerateScores);
            }
            Ok(-fmath::ln(py))
        }
    }
}

/// Mean forward-only loss over a batch (the gradient checker's oracle
/// path).
fn mean_loss(
    params: &ModelParameters,
    batch: &[(&TokenSequence, MatchLabel)],
    loss: LossMode<'_>,
    mode: ForwardMode,
) -> Result<f64, ModelError> {
    let mut total = 0.0;
    for (seq, label) in batch {
        total += example_loss(params, seq, *label, loss, mode)?;
    }
    Ok(total / batch.len() as f64)
}

/// Hyperparameters of one training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainSpec {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub dropout_rate: f64,
}

impl Default for TrainSpec {
    fn default() -> Self {
        // 2e-3 is the pretrained-backbone rate scaled x100: this model
        // starts from random weights.
        TrainSpec { learning_rate: 2e-3, batch_size: 32, epochs: 30, seed: 0, dropout_rate: 0.1 }
    }
}

/// AdamW with decoupled weight decay on matrix tensors (biases and
/// norm gains are exempt).
struct AdamW {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    weight_decay: f64,
    step: u64,
    m: ModelParameters,
    v: ModelParameters,
}

impl AdamW {
    fn new(lr: f64, params: &ModelParameters) -> Self {
        AdamW {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
            step: 0,
            m: params.zeros_like(),
            v: params.zeros_like(),
        }
    }

    fn step(&mut self, params: &mut ModelParameters, grads: &ModelParameters) {
        self.step += 1;
        let bc1 = 1.0 - libm::pow(self.beta1, self.step as f64);
        let bc2 = 1.0 - libm::pow(self.beta2, self.step as f64);
        let mut pt = params.tensors_mut();
        let gt = grads.tensors();
        let mut mt = self.m.tensors_mut();
        let mut vt = self.v.tensors_mut();
        for idx in 0..pt.len() {
            let decay = pt[idx].1.rows > 1;
            let p = &mut pt[idx].1.data;
            let g = &gt[idx].1.data;
            let m = &mut mt[idx].1.data;
            let v = &mut vt[idx].1.data;
            for i in 0..p.len() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                let mut update = (m[i] / bc1) / (fmath::sqrt(v[i] / bc2) + self.eps);
                if decay {
                    update += self.weight_decay * p[i];
                }
                p[i] -= self.lr * update;
            }
        }
    }
}

/// Per-epoch training record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub mean_loss: f64,
    pub valid: Option<Prf>,
}

/// Drives mini-batch training one epoch at a time so callers can prune
/// the working set between epochs. Owns the optimizer state.
pub struct Trainer<'a> {
    pub params: ModelParameters,
    loss: LossMode<'a>,
    spec: TrainSpec,
    opt: AdamW,
    epoch: usize,
    example_counter: u64,
    pub steps: u64,
}

impl<'a> Trainer<'a> {
    pub fn new(cfg: &ModelConfig, loss: LossMode<'a>, spec: TrainSpec) -> Self {
        let cfg = ModelConfig { dropout_rate: spec.dropout_rate, ..cfg.clone() };
        let params = ModelParameters::init(&cfg, spec.seed);
        let opt = AdamW::new(spec.learning_rate, &params);
        Trainer { params, loss, spec, opt, epoch: 0, example_counter: 0, steps: 0 }
    }

    /// One pass over `data` in a seeded shuffled order. Returns the
    /// mean per-example loss.
    pub fn run_epoch(&mut self, data: &[(&TokenSequence, MatchLabel)]) -> Result<f64, ModelError> {
        if data.is_empty() {
            return Err(ModelError::EmptyTrainingSet);
        }
        self.epoch += 1;
        let mut order: Vec<usize> = (0..data.len()).collect();
        let mut rng =
            ChaCha20Rng::seed_from_u64(seeds::mix3(self.spec.seed, STREAM_SHUFFLE, self.epoch as u64));
        rand::seq::SliceRandom::shuffle(&mut order[..], &mut rng);

        let mut grads = self.params.zeros_like();
        let mut epoch_loss = 0.0;
        for (batch_index, chunk) in order.chunks(self.spec.batch_size).enumerate() {
            for (_, t) in grads.tensors_mut() {
                t.data.iter_mut().for_each(|v| *v = 0.0);
            }
            let mut batch_loss = 0.0;
            for &i in chunk {
                let (seq, label) = data[i];
                let mode = ForwardMode::Stochastic {
                    seed: seeds::mix3(self.spec.seed, STREAM_DROPOUT, self.example_counter),
                };
                self.example_counter += 1;
                batch_loss += loss_grad_into(&self.params, seq, label, self.loss, mode, &mut grads)?;
            }
            if !batch_loss.is_finite() {
                return Err(ModelError::NonFiniteLoss { batch_index });
            }
            let inv = 1.0 / chunk.len() as f64;
            if inv != 1.0 {
                for (_, t) in grads.tensors_mut() {
                    t.data.iter_mut().for_each(|v| *v *= inv);
                }
            }
            self.opt.step(&mut self.params, &grads);
            self.steps += 1;
            epoch_loss += batch_loss;
        }
        Ok(epoch_loss / data.len() as f64)
    }

    /// Deterministic-mode metrics over a labeled set.
    pub fn evaluate(&self, data: &[(&TokenSequence, MatchLabel)]) -> Result<Prf, ModelError> {
        evaluate(&self.params, self.loss, data)
    }
}

/// Deterministic predictions + P/R/F1 over a labeled set.
pub fn evaluate(
    params: &ModelParameters,
    loss: LossMode<'_>,
    data: &[(&TokenSequence, MatchLabel)],
) -> Result<Prf, ModelError> {
    let mut preds = Vec::with_capacity(data.len());
    let mut golds = Vec::with_capacity(data.len());
    for (seq, label) in data {
        let probs = predict_probs(params, seq, loss, ForwardMode::Deterministic)?;
        preds.push(scores_to_label(probs));
        golds.push(*label);
    }
    Ok(eval::prf(&preds, &golds).expect("equal lengths"))
}

/// Outcome of a fixed-budget training run with per-epoch metrics and
/// the best-on-validation checkpoint.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: ModelParameters,
    pub epochs: Vec<EpochStats>,
    /// (1-based epoch, validation F1, checkpoint), when a validation
    /// set was supplied.
    pub best: Option<(usize, f64, ModelParameters)>,
    pub steps: u64,
}

/// Trains a fresh model for `spec.epochs` epochs of mini-batch AdamW.
pub fn train(
    cfg: &ModelConfig,
    data: &[(&TokenSequence, MatchLabel)],
    loss: LossMode<'_>,
    spec: &TrainSpec,
    valid: Option<&[(&TokenSequence, MatchLabel)]>,
) -> Result<TrainOutcome, ModelError> {
    if data.is_empty() {
        return Err(ModelError::EmptyTrainingSet);
    }
    let mut trainer = Trainer::new(cfg, loss, spec.clone());
    let mut epochs = Vec::with_capacity(spec.epochs);
    let mut best: Option<(usize, f64, ModelParameters)> = None;
    for epoch in 1..=spec.epochs {
        let mean_loss = trainer.run_epoch(data)?;
        let valid_prf = match valid {
            Some(v) => Some(trainer.evaluate(v)?),
            None => None,
        };
        if let Some(prf) = &valid_prf {
            let better = match &best {
                Some((_, best_f1, _)) => prf.f1 > *best_f1,
                None => true,
            };
            if better {
                best = Some((epoch, prf.f1, trainer.params.clone()));
            }
        }
        epochs.push(EpochStats { epoch, mean_loss, valid: valid_prf });
    }
    Ok(TrainOutcome { params: trainer.params, epochs, best, steps: trainer.steps })
}

/// L2 norm of all gradients for a batch (deterministic mode).
pub fn batch_grad_norm(
    params: &ModelParameters,
    batch: &[(&TokenSequence, MatchLabel)],
    loss: LossMode<'_>,
) -> Result<f64, ModelError> {
    let mut grads = params.zeros_like();
    for (seq, label) in batch {
        loss_grad_into(params, seq, *label, loss, ForwardMode::Deterministic, &mut grads)?;
    }
    let mut sq = 0.0;
    for (_, t) in grads.tensors() {
        sq += dot(&t.data, &t.data);
    }
    Ok(fmath::sqrt(sq))
}

/// Compares analytic gradients to central finite differences (step
/// 1e-4) on every element of every parameter tensor; returns the
/// per-tensor maximum relative errors. Intended for tiny models
/// (d <= 16, V <= 50).
///
/// A central difference with step h carries truncation error around
/// h^2 * f'''/6 per coordinate (verified by the h^2 scaling when the
/// step shrinks), so components below 1e-3 are measured against that
/// floor instead of their own magnitude; a wrong derivative still
/// shows up at full size against the floor.
pub fn gradient_check_per_tensor(
    params: &mut ModelParameters,
    batch: &[(&TokenSequence, MatchLabel)],
    loss: LossMode<'_>,
) -> Result<Vec<(String, f64)>, ModelError> {
    const H: f64 = 1e-4;
    let mut analytic = params.zeros_like();
    for (seq, label) in batch {
        loss_grad_into(params, seq, *label, loss, ForwardMode::Deterministic, &mut analytic)?;
    }
    let inv = 1.0 / batch.len() as f64;
    for (_, t) in analytic.tensors_mut() {
        t.data.iter_mut().for_each(|v| *v *= inv);
    }

    let n_tensors = params.tensors().len();
    let mut report = Vec::with_capacity(n_tensors);
    for ti in 0..n_tensors {
        let len = params.tensors()[ti].1.len();
        let mut tensor_max: f64 = 0.0;
        for ei in 0..len {
            let orig = params.tensors()[ti].1.data[ei];
            params.tensors_mut()[ti].1.data[ei] = orig + H;
            let lp = mean_loss(params, batch, loss, ForwardMode::Deterministic)?;
            params.tensors_mut()[ti].1.data[ei] = orig - H;
            let lm = mean_loss(params, batch, loss, ForwardMode::Deterministic)?;
            params.tensors_mut()[ti].1.data[ei] = orig;
            let numeric = (lp - lm) / (2.0 * H);
            let a = analytic.tensors()[ti].1.data[ei];
            let denom = a.abs().max(numeric.abs()).max(1e-3);
            let rel = (a - numeric).abs() / denom;
            if rel > tensor_max {
                tensor_max = rel;
            }
        }
        let name = params.tensors()[ti].0.clone();
        report.push((name, tensor_max));
    }
    Ok(report)
}

/// Maximum relative error across all tensors of
/// [`gradient_check_per_tensor`].
pub fn gradient_check(
    params: &mut ModelParameters,
    batch: &[(&TokenSequence, MatchLabel)],
    loss: LossMode<'_>,
) -> Result<f64, ModelError> {
    let report = gradient_check_per_tensor(params, batch, loss)?;
    Ok(report.into_iter().map(|(_, rel)| rel).fold(0.0, f64::max))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::serialize::{build_vocab, tokenize, Vocabulary};
    use alloc::vec;

    fn vocab() -> Vocabulary {
        build_vocab(
            ["alpha beta gamma delta epsilon zeta", "they are is to", "matched mismatched"],
            1,
        )
        .unwrap()
    }

    fn cfg(v: &Vocabulary, n_prompt: usize) -> ModelConfig {
        ModelConfig {
            vocab_size: v.size(),
            d_model: 16,
            n_blocks: 2,
            ffn_hidden: 24,
            max_len: 32,
            n_prompt_tokens: n_prompt,
            dropout_rate: 0.1,
        }
    }

    fn seq(v: &Vocabulary, text: &str) -> TokenSequence {
        tokenize(text, v, 32).unwrap()
    }

    fn class_words(v: &Vocabulary) -> ClassWords {
        ClassWords {
            ids: [
                vec![v.id_of_word("mismatched").unwrap()],
                vec![v.id_of_word("matched").unwrap()],
            ],
        }
    }

    #[test]
    fn deterministic_forward_is_repeatable() {
        let v = vocab();
        let params = ModelParameters::init(&cfg(&v, 0), 7);
        let s = seq(&v, "[CLS] alpha beta they are [MASK] [SEP]");
        let a = forward_mask(&params, &s, ForwardMode::Deterministic).unwrap();
        let b = forward_mask(&params, &s, ForwardMode::Deterministic).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn zero_dropout_stochastic_equals_deterministic() {
        let v = vocab();
        let c = ModelConfig { dropout_rate: 0.0, ..cfg(&v, 0) };
        let params = ModelParameters::init(&c, 7);
        let s = seq(&v, "[CLS] alpha beta gamma [MASK] [SEP]");
        let a = forward_mask(&params, &s, ForwardMode::Deterministic).unwrap();
        let b = forward_mask(&params, &s, ForwardMode::Stochastic { seed: 99 }).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn stochastic_passes_differ_and_are_seed_stable() {
        let v = vocab();
        let params = ModelParameters::init(&cfg(&v, 0), 7);
        let s = seq(&v, "[CLS] alpha beta gamma [MASK] [SEP]");
        let a = forward_mask(&params, &s, ForwardMode::Stochastic { seed: 1 }).unwrap();
        let b = forward_mask(&params, &s, ForwardMode::Stochastic { seed: 2 }).unwrap();
        let a2 = forward_mask(&params, &s, ForwardMode::Stochastic { seed: 1 }).unwrap();
        assert_ne!(a, b);
        assert_eq!(a, a2);
    }

    #[test]
    fn mask_distribution_sums_to_one_over_random_inputs() {
        let v = vocab();
        let params = ModelParameters::init(&cfg(&v, 0), 3);
        let words = ["alpha", "beta", "gamma", "delta", "epsilon", "zeta"];
        let mut rng_state = 11u64;
        for trial in 0..100 {
            let mut text = alloc::string::String::from("[CLS]");
            let len = 2 + (trial % 9);
            for _ in 0..len {
                rng_state = crate::seeds::splitmix64(rng_state);
                text.push(' ');
                text.push_str(words[(rng_state % words.len() as u64) as usize]);
            }
            text.push_str(" [MASK] [SEP]");
            let s = seq(&v, &text);
            let dist =
                forward_mask(&params, &s, ForwardMode::Stochastic { seed: trial as u64 }).unwrap();
            let sum: f64 = dist.iter().sum();
            assert!((sum - 1.0).abs() < 1e-6, "sum {sum}");
            assert!(dist.iter().all(|p| *p >= 0.0));
        }
    }

    #[test]
    fn missing_mask_is_an_error() {
        let v = vocab();
        let params = ModelParameters::init(&cfg(&v, 0), 7);
        let s = seq(&v, "[CLS] alpha [SEP]");
        assert!(matches!(
            forward_mask(&params, &s, ForwardMode::Deterministic),
            Err(ModelError::MissingMask)
        ));
    }

    #[test]
    fn cls_head_analytic_cases() {
        let v = vocab();
        let mut params = ModelParameters::init(&cfg(&v, 0), 7);
        params.cls_w = Mat::zeros(2, params.cfg.d_model);
        params.cls_b = Mat::zeros(1, 2);
        let s = seq(&v, "[CLS] alpha beta [SEP]");
        let p = forward_cls(&params, &s, ForwardMode::Deterministic).unwrap();
        assert_eq!(p, [0.5, 0.5]);

        params.cls_b.data[1] = fmath::ln(3.0);
        let p = forward_cls(&params, &s, ForwardMode::Deterministic).unwrap();
        assert!((p[0] - 0.25).abs() < 1e-12);
        assert!((p[1] - 0.75).abs() < 1e-12);
    }

    #[test]
    fn cls_probs_sum_to_one_and_need_cls_token() {
        let v = vocab();
        let params = ModelParameters::init(&cfg(&v, 0), 5);
        for i in 0..20u64 {
            let s = seq(&v, "[CLS] alpha gamma zeta [SEP]");
            let p = forward_cls(&params, &s, ForwardMode::Stochastic { seed: i }).unwrap();
            assert!((p[0] + p[1] - 1.0).abs() < 1e-12);
        }
        let bad = seq(&v, "alpha [SEP]");
        assert!(matches!(
            forward_cls(&params, &bad, ForwardMode::Deterministic),
            Err(ModelError::MissingCls)
        ));
    }

    fn toy_training_set(v: &Vocabulary) -> Vec<(TokenSequence, MatchLabel)> {
        // Separable by construction: repeated-token pairs are matches.
        vec![
            (seq(v, "[CLS] alpha beta alpha beta they are [MASK] [SEP]"), MatchLabel::Matched),
            (seq(v, "[CLS] gamma delta gamma delta they are [MASK] [SEP]"), MatchLabel::Matched),
            (seq(v, "[CLS] alpha beta epsilon zeta they are [MASK] [SEP]"), MatchLabel::Mismatched),
            (seq(v, "[CLS] gamma delta beta epsilon they are [MASK] [SEP]"), MatchLabel::Mismatched),
        ]
    }

    #[test]
    fn trainer_memorizes_separable_pairs() {
        let v = vocab();
        let words = class_words(&v);
        let data_owned = toy_training_set(&v);
        let data: Vec<(&TokenSequence, MatchLabel)> =
            data_owned.iter().map(|(s, l)| (s, *l)).collect();
        let spec = TrainSpec { epochs: 200, seed: 5, ..TrainSpec::default() };
        let out = train(&cfg(&v, 0), &data, LossMode::Prompt(&words), &spec, None).unwrap();
        for (s, label) in &data {
            let probs =
                predict_probs(&out.params, s, LossMode::Prompt(&words), ForwardMode::Deterministic)
                    .unwrap();
            assert_eq!(scores_to_label(probs), *label);
        }
        // Loss decreases over training on the toy set.
        assert!(out.epochs.last().unwrap().mean_loss < out.epochs[0].mean_loss);
    }

    #[test]
    fn zero_learning_rate_leaves_parameters_unchanged() {
        let v = vocab();
        let words = class_words(&v);
        let data_owned = toy_training_set(&v);
        let data: Vec<(&TokenSequence, MatchLabel)> =
            data_owned.iter().map(|(s, l)| (s, *l)).collect();
        let spec = TrainSpec { epochs: 3, seed: 5, learning_rate: 0.0, ..TrainSpec::default() };
        let c = cfg(&v, 0);
        let out = train(&c, &data, LossMode::Prompt(&words), &spec, None).unwrap();
        let fresh = ModelParameters::init(
            &ModelConfig { dropout_rate: spec.dropout_rate, ..c.clone() },
            spec.seed,
        );
        assert_eq!(out.params, fresh);
    }

    #[test]
    fn training_is_reproducible_for_a_fixed_seed() {
        let v = vocab();
        let words = class_words(&v);
        let data_owned = toy_training_set(&v);
        let data: Vec<(&TokenSequence, MatchLabel)> =
            data_owned.iter().map(|(s, l)| (s, *l)).collect();
        let spec = TrainSpec { epochs: 10, seed: 42, ..TrainSpec::default() };
        let a = train(&cfg(&v, 0), &data, LossMode::Prompt(&words), &spec, None).unwrap();
        let b = train(&cfg(&v, 0), &data, LossMode::Prompt(&words), &spec, None).unwrap();
        assert_eq!(a.params, b.params);
        assert_eq!(a.epochs, b.epochs);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let v = vocab();
        let words = class_words(&v);
        let data_owned = vec![
            (seq(&v, "[CLS] alpha beta [PROMPT_0] [MASK] [PROMPT_1] gamma [SEP]"), MatchLabel::Matched),
            (seq(&v, "[CLS] zeta epsilon [PROMPT_0] [MASK] [PROMPT_1] beta [SEP]"), MatchLabel::Mismatched),
        ];
        let batch: Vec<(&TokenSequence, MatchLabel)> =
            data_owned.iter().map(|(s, l)| (s, *l)).collect();
        let c = ModelConfig { d_model: 8, ffn_hidden: 12, n_prompt_tokens: 2, ..cfg(&v, 2) };
        let mut params = ModelParameters::init(&c, 13);
        params.randomize_uniform(0.3, 13);
        let max_rel = gradient_check(&mut params, &batch, LossMode::Prompt(&words)).unwrap();
        assert!(max_rel < 1e-4, "prompt-mode max relative error {max_rel}");

        let cls_owned = vec![
            (seq(&v, "[CLS] alpha beta gamma [SEP]"), MatchLabel::Matched),
            (seq(&v, "[CLS] zeta beta [SEP]"), MatchLabel::Mismatched),
        ];
        let cls_batch: Vec<(&TokenSequence, MatchLabel)> =
            cls_owned.iter().map(|(s, l)| (s, *l)).collect();
        let mut params = ModelParameters::init(&cfg(&v, 0), 17);
        params.randomize_uniform(0.3, 17);
        let max_rel = gradient_check(&mut params, &cls_batch, LossMode::Cls).unwrap();
        assert!(max_rel < 1e-4, "cls-mode max relative error {max_rel}");
    }

    #[test]
    fn prompt_embeddings_receive_gradient_under_continuous_template() {
        let v = vocab();
        let words = class_words(&v);
        let c = ModelConfig { n_prompt_tokens: 2, ..cfg(&v, 2) };
        let params = ModelParameters::init(&c, 3);
        let s = seq(&v, "[CLS] alpha beta [PROMPT_0] [MASK] [PROMPT_1] gamma [SEP]");
        let mut grads = params.zeros_like();
        loss_grad_into(
            &params,
            &s,
            MatchLabel::Matched,
            LossMode::Prompt(&words),
            ForwardMode::Deterministic,
            &mut grads,
        )
        .unwrap();
        let phi_norm: f64 =
            grads.prompt.as_ref().unwrap().phi.data.iter().map(|g| g * g).sum::<f64>();
        assert!(phi_norm > 0.0);
    }

    #[test]
    fn matched_label_distribution_is_a_stationary_point() {
        // Zero classifier predicts (0.5, 0.5) for every input; a batch
        // holding both labels of the same input has that exact label
        // distribution, so the gradient vanishes.
        let v = vocab();
        let mut params = ModelParameters::init(&cfg(&v, 0), 7);
        params.cls_w = Mat::zeros(2, params.cfg.d_model);
        params.cls_b = Mat::zeros(1, 2);
        let s = seq(&v, "[CLS] alpha beta gamma [SEP]");
        let batch: Vec<(&TokenSequence, MatchLabel)> =
            vec![(&s, MatchLabel::Mismatched), (&s, MatchLabel::Matched)];
        let norm = batch_grad_norm(&params, &batch, LossMode::Cls).unwrap();
        assert!(norm < 1e-8, "gradient norm {norm}");
    }

    #[test]
    fn prompt_token_without_parameters_is_an_error() {
        let v = vocab();
        let params = ModelParameters::init(&cfg(&v, 0), 7);
        let s = seq(&v, "[CLS] alpha [PROMPT_0] [MASK] [SEP]");
        assert!(matches!(
            forward_mask(&params, &s, ForwardMode::Deterministic),
            Err(ModelError::PromptTokenUnavailable { .. })
        ));
    }
}
