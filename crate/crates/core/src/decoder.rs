//! Caption decoder and generation.
//!
//! Each step feeds `[E w_t; Θ_{t-1} + Ḡ]` to an LSTM, queries the shared
//! decoder LAN with `h_t` against the encoder's local features, forms
//! `Θ_t = W_A [Ĝ_dec; h_t]` and predicts words from `W_υ ELU(Θ_t)`.
//!
//! Generated sequences exclude the leading BOS and include the trailing EOS
//! when the hypothesis finished.

use alloc::vec;
use alloc::vec::Vec;
use core::cmp::Ordering;

use rand::Rng;

use crate::diffcore::{log_softmax, lstm_cell, Dense, Graph, Init, LstmWeights, ParamId, ParamStore, Tensor, Var};
use crate::error::{Error, Result};
use crate::lan::{self, LanDims, LanMemory, LanWeights};
use crate::vocab::{BOS, EOS, PAD, UNK};

/// Tokens generation never emits.
pub const MASKED_TOKENS: [usize; 3] = [PAD, UNK, BOS];
const MASK_LOGIT: f64 = -1e9;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DecoderDims {
    pub vocab: usize,
    pub word_embed: usize,
    pub d_h: usize,
    pub z: usize,
    pub z_prime: usize,
    pub x: usize,
}

#[derive(Clone, Copy, Debug)]
pub struct DecoderWeights {
    pub embedding: ParamId,
    pub lstm: LstmWeights,
    pub lan: LanWeights,
    /// `W_A`, `[z + d_h] → z`.
    pub attend: Dense,
    /// `W_υ`, `z → vocab`.
    pub out: Dense,
    pub dims: DecoderDims,
}

impl DecoderWeights {
    pub fn register<R: Rng + ?Sized>(store: &mut ParamStore, dims: DecoderDims, rng: &mut R) -> Result<Self> {
        if dims.vocab <= EOS {
            return Err(Error::Config("vocabulary must contain the reserved tokens".into()));
        }
        let lan_dims = LanDims {
            q: dims.d_h,
            k: dims.z,
            v: dims.z,
            z: dims.z,
            z_prime: dims.z_prime,
            x: dims.x,
        };
        Ok(Self {
            embedding: store.add("dec.embedding", &[dims.vocab, dims.word_embed], Init::XavierUniform, rng)?,
            lstm: LstmWeights::register(store, "dec.lstm", dims.word_embed + dims.z, dims.d_h, rng)?,
            lan: LanWeights::register(store, "dec.lan", lan_dims, rng)?,
            attend: Dense::register(store, "dec.w_a", dims.z + dims.d_h, dims.z, true, rng)?,
            out: Dense::register(store, "dec.w_out", dims.z, dims.vocab, true, rng)?,
            dims,
        })
    }
}

#[derive(Clone, Copy, Debug)]
pub struct DecoderState {
    pub h: Var,
    pub c: Var,
    pub theta_prev: Var,
}

/// Per-video inputs shared by every step: prepared LAN memory over the
/// local features and the global feature `Ḡ`.
#[derive(Clone, Copy, Debug)]
pub struct DecoderContext {
    pub memory: LanMemory,
    pub g_bar: Var,
}

pub fn prepare_context(g: &mut Graph<'_>, local_feats: Var, g_bar: Var, w: &DecoderWeights) -> Result<DecoderContext> {
    if g.shape(g_bar) != [w.dims.z] {
        return Err(Error::Shape {
            op: "decoder global feature",
            lhs: g.shape(g_bar).to_vec(),
            rhs: vec![w.dims.z],
        });
    }
    let memory = lan::prepare_memory(g, local_feats, local_feats, &w.lan)?;
    Ok(DecoderContext { memory, g_bar })
}

/// `h = c = 0`, `Θ_0 = 0`.
pub fn init_state(g: &mut Graph<'_>, w: &DecoderWeights) -> DecoderState {
    DecoderState {
        h: g.constant(Tensor::zeros(&[w.dims.d_h])),
        c: g.constant(Tensor::zeros(&[w.dims.d_h])),
        theta_prev: g.constant(Tensor::zeros(&[w.dims.z])),
    }
}

/// One decoder step on input token `token`; returns word logits.
pub fn decode_step(
    g: &mut Graph<'_>,
    token: usize,
    state: DecoderState,
    ctx: &DecoderContext,
    w: &DecoderWeights,
) -> Result<(Var, DecoderState)> {
    if token >= w.dims.vocab {
        return Err(Error::Index {
            what: "vocabulary",
            index: token,
            size: w.dims.vocab,
        });
    }
    let table = g.param(w.embedding);
    let e = g.gather(table, token)?;
    let cond = g.add(state.theta_prev, ctx.g_bar)?;
    let x = g.concat(&[e, cond])?;
    let (h, c) = lstm_cell(g, x, state.h, state.c, &w.lstm)?;
    let att = lan::lan_query(g, h, &ctx.memory, &w.lan)?;
    let joined = g.concat(&[att.global_feat, h])?;
    let theta = w.attend.forward(g, joined)?;
    let act = g.elu(theta);
    let logits = w.out.forward(g, act)?;
    Ok((logits, DecoderState { h, c, theta_prev: theta }))
}

/// Logits for every target position given `[BOS, w_1 .. w_{T-1}]` inputs.
/// `targets` are `[w_1 .. w_T]` (usually ending in EOS).
pub fn teacher_forced(g: &mut Graph<'_>, targets: &[usize], ctx: &DecoderContext, w: &DecoderWeights) -> Result<Vec<Var>> {
    let mut state = init_state(g, w);
    let mut prev = BOS;
    let mut out = Vec::with_capacity(targets.len());
    for &t in targets {
        let (logits, next) = decode_step(g, prev, state, ctx, w)?;
        out.push(logits);
        state = next;
        prev = t;
    }
    Ok(out)
}

/// Log-probabilities with the masked tokens removed from the support.
pub fn masked_log_probs(logits: &[f64]) -> Result<Vec<f64>> {
    let mut l = logits.to_vec();
    for &m in &MASKED_TOKENS {
        if m < l.len() {
            l[m] = f64::NEG_INFINITY;
        }
    }
    log_softmax(&l)
}

fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Argmax decoding from BOS until EOS or `max_len` tokens.
pub fn greedy_decode(g: &mut Graph<'_>, ctx: &DecoderContext, w: &DecoderWeights, max_len: usize) -> Result<Vec<usize>> {
    if max_len == 0 {
        return Err(Error::Invalid("max_len must be at least 1".into()));
    }
    let mut state = init_state(g, w);
    let mut prev = BOS;
    let mut out = Vec::new();
    for _ in 0..max_len {
        let (logits, next) = decode_step(g, prev, state, ctx, w)?;
        let lp = masked_log_probs(g.value(logits).data())?;
        let tok = argmax(&lp);
        out.push(tok);
        if tok == EOS {
            break;
        }
        state = next;
        prev = tok;
    }
    Ok(out)
}

/// Samples a caption from the masked word distribution. Returns the tokens
/// and their summed log-probability as a differentiable scalar.
pub fn sample_decode<R: Rng + ?Sized>(
    g: &mut Graph<'_>,
    ctx: &DecoderContext,
    w: &DecoderWeights,
    max_len: usize,
    rng: &mut R,
) -> Result<(Vec<usize>, Var)> {
    if max_len == 0 {
        return Err(Error::Invalid("max_len must be at least 1".into()));
    }
    let mut mask = vec![0.0; w.dims.vocab];
    for &m in &MASKED_TOKENS {
        mask[m] = MASK_LOGIT;
    }
    let mask = g.constant(Tensor::vector(mask));
    let mut state = init_state(g, w);
    let mut prev = BOS;
    let mut tokens = Vec::new();
    let mut picked = Vec::new();
    for _ in 0..max_len {
        let (logits, next) = decode_step(g, prev, state, ctx, w)?;
        let masked = g.add(logits, mask)?;
        let lp = g.log_softmax(masked);
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut tok = EOS;
        for (i, &l) in g.value(lp).data().iter().enumerate() {
            if MASKED_TOKENS.contains(&i) {
                continue;
            }
            acc += crate::math::exp(l);
            tok = i;
            if u < acc {
                break;
            }
        }
        picked.push(g.pick(lp, tok)?);
        tokens.push(tok);
        if tok == EOS {
            break;
        }
        state = next;
        prev = tok;
    }
    let total = g.add_n(&picked)?;
    Ok((tokens, total))
}

#[derive(Clone, Debug)]
pub struct Hypothesis {
    pub tokens: Vec<usize>,
    pub log_prob: f64,
    pub state: DecoderState,
    pub finished: bool,
}

impl Hypothesis {
    /// `log_prob / token count`.
    pub fn normalized_score(&self) -> f64 {
        self.log_prob / self.tokens.len().max(1) as f64
    }
}

fn rank_final(mut hyps: Vec<Hypothesis>) -> Vec<Hypothesis> {
    // stable sort keeps discovery order among ties
    hyps.sort_by(|a, b| b.normalized_score().partial_cmp(&a.normalized_score()).unwrap_or(Ordering::Equal));
    hyps
}

/// Beam search over masked log-softmax scores. Finished hypotheses retire
/// from the beam; those cut at `max_len` remain candidates. Every retired
/// hypothesis is returned, ranked by length-normalized log-probability.
pub fn beam_decode(
    g: &mut Graph<'_>,
    ctx: &DecoderContext,
    w: &DecoderWeights,
    width: usize,
    max_len: usize,
) -> Result<Vec<Hypothesis>> {
    if width == 0 || max_len == 0 {
        return Err(Error::Invalid("beam width and max_len must be at least 1".into()));
    }
    let init = init_state(g, w);
    let mut live = vec![Hypothesis {
        tokens: Vec::new(),
        log_prob: 0.0,
        state: init,
        finished: false,
    }];
    let mut done = Vec::new();
    for _ in 0..max_len {
        if live.is_empty() {
            break;
        }
        let mut expanded = Vec::with_capacity(live.len());
        let mut cands: Vec<(f64, usize, usize)> = Vec::new();
        for (b, hyp) in live.iter().enumerate() {
            let prev = hyp.tokens.last().copied().unwrap_or(BOS);
            let (logits, next) = decode_step(g, prev, hyp.state, ctx, w)?;
            let lp = masked_log_probs(g.value(logits).data())?;
            for (k, &l) in lp.iter().enumerate() {
                if !MASKED_TOKENS.contains(&k) {
                    cands.push((hyp.log_prob + l, b, k));
                }
            }
            expanded.push(next);
        }
        cands.sort_by(|a, b| {
            b.0.partial_cmp(&a.0)
                .unwrap_or(Ordering::Equal)
                .then(a.1.cmp(&b.1))
                .then(a.2.cmp(&b.2))
        });
        let mut next_live = Vec::with_capacity(width);
        for &(score, b, k) in cands.iter().take(width) {
            let mut tokens = live[b].tokens.clone();
            tokens.push(k);
            let hyp = Hypothesis {
                tokens,
                log_prob: score,
                state: expanded[b],
                finished: k == EOS,
            };
            if hyp.finished {
                done.push(hyp);
            } else {
                next_live.push(hyp);
            }
        }
        live = next_live;
    }
    done.extend(live);
    Ok(rank_final(done))
}

/// One generated caption with the POS sequence that produced its `Ḡ`.
#[derive(Clone, Debug, PartialEq)]
pub struct DiverseCaption {
    pub tokens: Vec<usize>,
    pub pos: Vec<crate::vocab::PosTag>,
}

/// `n_samples` VaPEn rollouts seeded `seed, seed+1, ...`, each beam-decoded
/// once with its own `Ḡ`.
#[allow(clippy::too_many_arguments)]
pub fn diverse_decode(
    g: &mut Graph<'_>,
    local_feats: Var,
    g_tilde: Var,
    vapen: &crate::vapen::VapenWeights,
    w: &DecoderWeights,
    n_samples: usize,
    seed: u64,
    width: usize,
    max_len: usize,
) -> Result<Vec<DiverseCaption>> {
    if n_samples == 0 {
        return Err(Error::Invalid("n_samples must be at least 1".into()));
    }
    let memory = lan::prepare_memory(g, local_feats, local_feats, &w.lan)?;
    let mut out = Vec::with_capacity(n_samples);
    for i in 0..n_samples as u64 {
        let roll = crate::vapen::sample_rollout(g, g_tilde, vapen, seed.wrapping_add(i), max_len)?;
        let ctx = DecoderContext {
            memory,
            g_bar: roll.g_bar,
        };
        let best = beam_decode(g, &ctx, w, width, max_len)?;
        out.push(DiverseCaption {
            tokens: best.into_iter().next().map(|h| h.tokens).unwrap_or_default(),
            pos: roll.pos,
        });
    }
    Ok(out)
}
