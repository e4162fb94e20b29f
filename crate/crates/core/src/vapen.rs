//! Variational POS encoder: a variational recurrent network over POS tag
//! sequences, initialized from the concatenated encoder globals.
//!
//! At step `t` the prior `N(μ₀, σ₀²)` is predicted from the previous LSTM
//! state `s_{t-1}`; the posterior additionally sees the embedding of the
//! observed tag `p_t`. A latent `δ_t` (posterior sample in training, prior
//! sample in generation) and `s_{t-1}` predict categorical tag logits, and
//! the LSTM consumes `[embed(p_t); δ_t]`. The projected final state is the
//! decoder's global feature `Ḡ`.

use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::diffcore::{lstm_cell, softmax, Dense, Graph, Init, LstmWeights, Mlp, ParamId, ParamStore, Tensor, Var};
use crate::error::{Error, Result};
use crate::vocab::PosTag;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct VapenDims {
    /// Length of the concatenated encoder globals.
    pub g_tilde: usize,
    pub hidden: usize,
    pub delta: usize,
    pub pos_vocab: usize,
    pub pos_embed: usize,
    pub mlp_hidden: usize,
    /// Width of `Ḡ`.
    pub z: usize,
}

#[derive(Clone, Copy, Debug)]
pub struct VapenWeights {
    /// `G̃ → s_0` (tanh).
    pub init: Dense,
    pub pos_embedding: ParamId,
    pub prior: Mlp,
    pub posterior: Mlp,
    pub emission: Mlp,
    pub lstm: LstmWeights,
    /// `W_g`, `[z, hidden]`, no bias.
    pub to_global: ParamId,
    pub dims: VapenDims,
}

impl VapenWeights {
    pub fn register<R: Rng + ?Sized>(store: &mut ParamStore, dims: VapenDims, rng: &mut R) -> Result<Self> {
        let d = dims;
        Ok(Self {
            init: Dense::register(store, "vapen.init", d.g_tilde, d.hidden, true, rng)?,
            pos_embedding: store.add("vapen.pos_embedding", &[d.pos_vocab, d.pos_embed], Init::XavierUniform, rng)?,
            prior: Mlp::register(store, "vapen.prior", d.hidden, d.mlp_hidden, 2 * d.delta, rng)?,
            posterior: Mlp::register(store, "vapen.posterior", d.pos_embed + d.hidden, d.mlp_hidden, 2 * d.delta, rng)?,
            emission: Mlp::register(store, "vapen.emission", d.delta + d.hidden, d.mlp_hidden, d.pos_vocab, rng)?,
            lstm: LstmWeights::register(store, "vapen.lstm", d.pos_embed + d.delta, d.hidden, rng)?,
            to_global: store.add("vapen.w_g", &[d.z, d.hidden], Init::XavierUniform, rng)?,
            dims,
        })
    }
}

/// Recurrent state `(s, c)` of the POS LSTM.
#[derive(Clone, Copy, Debug)]
pub struct VapenState {
    pub s: Var,
    pub c: Var,
}

/// Gaussian parameters and the drawn latent at one step.
#[derive(Clone, Copy, Debug)]
pub struct LatentState {
    pub mu: Var,
    pub log_var: Var,
    pub delta: Var,
}

fn split_gaussian(g: &mut Graph<'_>, out: Var, delta: usize) -> Result<(Var, Var)> {
    let mu = g.slice(out, 0, delta)?;
    let lv = g.slice(out, delta, delta)?;
    Ok((mu, lv))
}

/// `s_0 = tanh(W G̃ + b)`, `c_0 = 0`.
pub fn initial_state(g: &mut Graph<'_>, g_tilde: Var, w: &VapenWeights) -> Result<VapenState> {
    let pre = w.init.forward(g, g_tilde)?;
    let s = g.tanh(pre);
    let c = g.constant(Tensor::zeros(&[w.dims.hidden]));
    Ok(VapenState { s, c })
}

/// Prior `(μ₀, log σ₀²)` from the previous state.
pub fn prior_step(g: &mut Graph<'_>, s_prev: Var, w: &VapenWeights) -> Result<(Var, Var)> {
    let out = w.prior.forward(g, s_prev)?;
    split_gaussian(g, out, w.dims.delta)
}

/// Posterior `(μ, log σ²)` from the observed tag embedding and previous state.
pub fn posterior_step(g: &mut Graph<'_>, pos_embedding: Var, s_prev: Var, w: &VapenWeights) -> Result<(Var, Var)> {
    let x = g.concat(&[pos_embedding, s_prev])?;
    let out = w.posterior.forward(g, x)?;
    split_gaussian(g, out, w.dims.delta)
}

/// Categorical tag logits from the latent and the previous state.
pub fn emit_pos(g: &mut Graph<'_>, delta: Var, s_prev: Var, w: &VapenWeights) -> Result<Var> {
    let x = g.concat(&[delta, s_prev])?;
    w.emission.forward(g, x)
}

pub fn embed_pos(g: &mut Graph<'_>, tag: usize, w: &VapenWeights) -> Result<Var> {
    let table = g.param(w.pos_embedding);
    g.gather(table, tag)
}

/// Recurrence on `[embed(p_t); δ_t]`.
pub fn advance(g: &mut Graph<'_>, tag_embedding: Var, delta: Var, state: VapenState, w: &VapenWeights) -> Result<VapenState> {
    let x = g.concat(&[tag_embedding, delta])?;
    let (s, c) = lstm_cell(g, x, state.s, state.c, &w.lstm)?;
    Ok(VapenState { s, c })
}

/// `Ḡ = W_g s_T`.
pub fn global_feature(g: &mut Graph<'_>, s_last: Var, w: &VapenWeights) -> Result<Var> {
    let wg = g.param(w.to_global);
    g.linear(s_last, wg, None)
}

/// Terms of the negated evidence lower bound on one tag sequence.
#[derive(Clone, Debug)]
pub struct ElboOutput {
    /// `kl + recon`.
    pub loss: Var,
    /// `Σ_t KL(q_t ‖ prior_t)`.
    pub kl: Var,
    /// `-Σ_t log r(p_t | δ_t, s_{t-1})`.
    pub recon: Var,
    pub posteriors: Vec<LatentState>,
    pub priors: Vec<(Var, Var)>,
    pub final_hidden: Var,
    pub g_bar: Var,
}

/// Teacher-forced rollout with posterior samples. `tags` are the targets
/// after BOS (normally ending in EOS); `noise[t]` is the standard-normal
/// draw for step `t`.
pub fn elbo(g: &mut Graph<'_>, tags: &[usize], g_tilde: Var, w: &VapenWeights, noise: &[Tensor]) -> Result<ElboOutput> {
    if tags.is_empty() {
        return Err(Error::Empty { op: "elbo" });
    }
    if noise.len() != tags.len() {
        return Err(Error::Invalid(alloc::format!(
            "elbo needs one noise vector per tag ({} tags, {} noise)",
            tags.len(),
            noise.len()
        )));
    }
    let mut state = initial_state(g, g_tilde, w)?;
    let mut kls = Vec::with_capacity(tags.len());
    let mut recons = Vec::with_capacity(tags.len());
    let mut posteriors = Vec::with_capacity(tags.len());
    let mut priors = Vec::with_capacity(tags.len());
    for (&tag, eps) in tags.iter().zip(noise) {
        if tag >= w.dims.pos_vocab {
            return Err(Error::Index {
                what: "POS tag set",
                index: tag,
                size: w.dims.pos_vocab,
            });
        }
        let (mu_p, lv_p) = prior_step(g, state.s, w)?;
        let emb = embed_pos(g, tag, w)?;
        let (mu_q, lv_q) = posterior_step(g, emb, state.s, w)?;
        let delta = g.gaussian_sample(mu_q, lv_q, eps)?;
        let logits = emit_pos(g, delta, state.s, w)?;
        recons.push(g.nll(logits, tag)?);
        kls.push(g.kl_diag_gaussian(mu_q, lv_q, mu_p, lv_p)?);
        state = advance(g, emb, delta, state, w)?;
        posteriors.push(LatentState {
            mu: mu_q,
            log_var: lv_q,
            delta,
        });
        priors.push((mu_p, lv_p));
    }
    let kl = g.add_n(&kls)?;
    let recon = g.add_n(&recons)?;
    let loss = g.add(kl, recon)?;
    let g_bar = global_feature(g, state.s, w)?;
    Ok(ElboOutput {
        loss,
        kl,
        recon,
        posteriors,
        priors,
        final_hidden: state.s,
        g_bar,
    })
}

/// How generation picks latents and tags.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RolloutMode {
    /// `δ_t` drawn from the prior, tags sampled from the emission.
    Sample,
    /// `δ_t = μ₀`, most probable tag.
    Mode,
}

/// A generated tag sequence and its latent trajectory.
#[derive(Clone, Debug)]
pub struct VapenRollout {
    pub states: Vec<LatentState>,
    /// Generated tags after BOS; ends with EOS unless `max_len` was hit.
    pub pos: Vec<PosTag>,
    pub final_hidden: Var,
    pub g_bar: Var,
}

fn pick_tag<R: Rng + ?Sized>(logits: &[f64], mode: RolloutMode, rng: &mut R) -> Result<usize> {
    let mut probs = softmax(logits)?;
    probs[PosTag::Pad.index()] = 0.0;
    probs[PosTag::Bos.index()] = 0.0;
    match mode {
        RolloutMode::Mode => Ok(probs
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |best, (i, &p)| if p > best.1 { (i, p) } else { best })
            .0),
        RolloutMode::Sample => {
            let total: f64 = probs.iter().sum();
            let mut u = rng.random::<f64>() * total;
            let mut last = PosTag::Eos.index();
            for (i, &p) in probs.iter().enumerate() {
                if p <= 0.0 {
                    continue;
                }
                last = i;
                if u < p {
                    return Ok(i);
                }
                u -= p;
            }
            Ok(last)
        }
    }
}

/// Generative rollout from the prior until EOS or `max_len` tags.
pub fn rollout<R: Rng + ?Sized>(
    g: &mut Graph<'_>,
    g_tilde: Var,
    w: &VapenWeights,
    max_len: usize,
    mode: RolloutMode,
    rng: &mut R,
) -> Result<VapenRollout> {
    if max_len == 0 {
        return Err(Error::Invalid("rollout max_len must be at least 1".into()));
    }
    let mut state = initial_state(g, g_tilde, w)?;
    let mut states = Vec::new();
    let mut pos = Vec::new();
    for _ in 0..max_len {
        let (mu, lv) = prior_step(g, state.s, w)?;
        let delta = match mode {
            RolloutMode::Mode => mu,
            RolloutMode::Sample => {
                let eps: Vec<f64> = (0..w.dims.delta).map(|_| StandardNormal.sample(rng)).collect();
                g.gaussian_sample(mu, lv, &Tensor::vector(eps))?
            }
        };
        let logits = emit_pos(g, delta, state.s, w)?;
        let tag = pick_tag(g.value(logits).data(), mode, rng)?;
        let emb = embed_pos(g, tag, w)?;
        state = advance(g, emb, delta, state, w)?;
        states.push(LatentState { mu, log_var: lv, delta });
        let tag = PosTag::from_index(tag).ok_or(Error::Index {
            what: "POS tag set",
            index: tag,
            size: PosTag::COUNT,
        })?;
        pos.push(tag);
        if tag == PosTag::Eos {
            break;
        }
    }
    let g_bar = global_feature(g, state.s, w)?;
    Ok(VapenRollout {
        states,
        pos,
        final_hidden: state.s,
        g_bar,
    })
}

/// Seeded sampling rollout.
pub fn sample_rollout(g: &mut Graph<'_>, g_tilde: Var, w: &VapenWeights, seed: u64, max_len: usize) -> Result<VapenRollout> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rollout(g, g_tilde, w, max_len, RolloutMode::Sample, &mut rng)
}

/// Deterministic most-likely rollout.
pub fn mode_rollout(g: &mut Graph<'_>, g_tilde: Var, w: &VapenWeights, max_len: usize) -> Result<VapenRollout> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    rollout(g, g_tilde, w, max_len, RolloutMode::Mode, &mut rng)
}
