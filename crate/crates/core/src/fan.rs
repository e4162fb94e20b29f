//! Feature aggregation network and the stacked multi-stream encoder.
//!
//! Streams are folded into a running `[N, z]` aggregate one at a time. For
//! stream `m` the aggregate is summarized by a self-attentive LAN (query =
//! clip mean) into `Ĝ^m`; the projected stream is then pooled against
//! `Ĝ^m` and added back to the aggregate under a layer norm. The first
//! stream is folded against itself.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::Rng;

use crate::config::Dims;
use crate::diffcore::{Dense, Graph, Init, ParamId, ParamStore, Var, LAYER_NORM_EPS};
use crate::error::{Error, Result};
use crate::lan::{self, LanDims, LanOutput, LanWeights};

/// One input feature stream and its position in the stack.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StreamSpec {
    pub stream_id: u32,
    pub name: String,
    pub dim: usize,
    pub order_index: usize,
}

/// Checks that order indices are exactly `0..M` and dims are positive.
pub fn validate_streams(specs: &[StreamSpec]) -> Result<()> {
    if specs.is_empty() {
        return Err(Error::Config("at least one feature stream is required".into()));
    }
    let mut seen = alloc::vec![false; specs.len()];
    for s in specs {
        if s.dim == 0 {
            return Err(Error::Config(format!("stream `{}` has zero dimension", s.name)));
        }
        match seen.get_mut(s.order_index) {
            Some(slot) if !*slot => *slot = true,
            _ => {
                return Err(Error::Config(format!(
                    "stream order indices must be 0..{} without gaps or repeats (stream `{}` has {})",
                    specs.len(),
                    s.name,
                    s.order_index
                )))
            }
        }
    }
    Ok(())
}

#[derive(Clone, Copy, Debug)]
pub struct FanWeights {
    /// `z → y` projection of the global feature.
    pub global_proj: Dense,
    /// `z → y` projection of each new clip.
    pub local_proj: Dense,
    /// `y → z` projection of the pooled clip.
    pub out_proj: Dense,
    pub ln_gain: ParamId,
    pub ln_bias: ParamId,
}

impl FanWeights {
    pub fn register<R: Rng + ?Sized>(
        store: &mut ParamStore,
        prefix: &str,
        z: usize,
        y: usize,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(Self {
            global_proj: Dense::register(store, &format!("{prefix}.w_g"), z, y, true, rng)?,
            local_proj: Dense::register(store, &format!("{prefix}.w_l"), z, y, true, rng)?,
            out_proj: Dense::register(store, &format!("{prefix}.w_l_prime"), y, z, true, rng)?,
            ln_gain: store.add(&format!("{prefix}.ln.gain"), &[z], Init::Constant(1.0), rng)?,
            ln_bias: store.add(&format!("{prefix}.ln.bias"), &[z], Init::Zeros, rng)?,
        })
    }
}

/// Weights of stack position `m`: input projection, LAN and fold.
#[derive(Clone, Copy, Debug)]
pub struct EncoderBlock {
    /// `[z, v_m]`, no bias.
    pub input_proj: ParamId,
    pub lan: LanWeights,
    pub fan: FanWeights,
}

#[derive(Clone, Debug)]
pub struct EncoderWeights {
    pub streams: Vec<StreamSpec>,
    pub blocks: Vec<EncoderBlock>,
    pub z: usize,
}

impl EncoderWeights {
    /// `streams` in any order; blocks follow `order_index`.
    pub fn register<R: Rng + ?Sized>(
        store: &mut ParamStore,
        streams: &[StreamSpec],
        dims: &Dims,
        rng: &mut R,
    ) -> Result<Self> {
        validate_streams(streams)?;
        let mut ordered = streams.to_vec();
        ordered.sort_by_key(|s| s.order_index);
        let mut blocks = Vec::with_capacity(ordered.len());
        for (m, s) in ordered.iter().enumerate() {
            let input_proj = store.add(&format!("enc.{m}.w_in"), &[dims.z, s.dim], Init::XavierUniform, rng)?;
            let lan_dims = LanDims {
                q: dims.z,
                k: dims.z,
                v: dims.z,
                z: dims.z,
                z_prime: dims.z_prime,
                x: dims.x,
            };
            let lan = LanWeights::register(store, &format!("enc.{m}.lan"), lan_dims, rng)?;
            let fan = FanWeights::register(store, &format!("enc.{m}.fan"), dims.z, dims.y, rng)?;
            blocks.push(EncoderBlock { input_proj, lan, fan });
        }
        Ok(Self {
            streams: ordered,
            blocks,
            z: dims.z,
        })
    }

    pub fn num_streams(&self) -> usize {
        self.blocks.len()
    }

    pub fn g_tilde_dim(&self) -> usize {
        self.blocks.len() * self.z
    }
}

#[derive(Clone, Debug)]
pub struct EncoderOutput {
    /// Final aggregate `[N, z]`, the decoder's local features.
    pub local_final: Var,
    /// `Ĝ^0 .. Ĝ^{M-1}`, each `[z]`.
    pub globals: Vec<Var>,
    /// Concatenation of `globals`, `[M·z]`.
    pub g_tilde: Var,
    /// LAN intermediates of each block.
    pub lan_outputs: Vec<LanOutput>,
}

/// Per-clip projection of a raw stream `[N, v_m]` to `[N, z]`.
pub fn project_stream(g: &mut Graph<'_>, stream: Var, w_in: ParamId) -> Result<Var> {
    let w = g.param(w_in);
    g.linear(stream, w, None)
}

/// Self-attentive LAN over an aggregate: query is the clip mean, keys and
/// values are the clips themselves.
pub fn encoder_lan(g: &mut Graph<'_>, aggregate: Var, w: &LanWeights) -> Result<LanOutput> {
    let q = g.mean_rows(aggregate)?;
    lan::lan_forward(g, q, aggregate, aggregate, w)
}

/// `LayerNorm(ReLU(W_{L'} (ELU(W_G Ĝ) ⊙ ELU(W_L l_i))) + prev_i)` per clip.
pub fn fan_fold(g: &mut Graph<'_>, g_hat: Var, new_local: Var, prev_local: Var, w: &FanWeights) -> Result<Var> {
    if g.shape(new_local) != g.shape(prev_local) {
        return Err(Error::Shape {
            op: "fan_fold",
            lhs: g.shape(new_local).to_vec(),
            rhs: g.shape(prev_local).to_vec(),
        });
    }
    let pg = w.global_proj.forward(g, g_hat)?;
    let pg = g.elu(pg);
    let pl = w.local_proj.forward(g, new_local)?;
    let pl = g.elu(pl);
    let pooled = g.mul_row(pl, pg)?;
    let lifted = w.out_proj.forward(g, pooled)?;
    let lifted = g.relu(lifted);
    let sum = g.add(lifted, prev_local)?;
    let gain = g.param(w.ln_gain);
    let bias = g.param(w.ln_bias);
    g.layer_norm(sum, gain, bias, LAYER_NORM_EPS)
}

/// Runs the whole stack over streams given in stack order.
pub fn encode_video(g: &mut Graph<'_>, streams: &[Var], enc: &EncoderWeights) -> Result<EncoderOutput> {
    if streams.len() != enc.blocks.len() {
        return Err(Error::Invalid(format!(
            "encoder expects {} streams, got {}",
            enc.blocks.len(),
            streams.len()
        )));
    }
    let clip_count = |g: &Graph<'_>, v: Var| g.shape(v).first().copied().unwrap_or(0);
    let n0 = clip_count(g, streams[0]);
    for (m, &s) in streams.iter().enumerate().skip(1) {
        let n = clip_count(g, s);
        if n != n0 {
            return Err(Error::ClipMismatch {
                first: enc.streams[0].name.clone(),
                first_clips: n0,
                other: enc.streams[m].name.clone(),
                other_clips: n,
            });
        }
    }

    let mut globals = Vec::with_capacity(streams.len());
    let mut lan_outputs = Vec::with_capacity(streams.len());
    let block0 = &enc.blocks[0];
    let l0 = project_stream(g, streams[0], block0.input_proj)?;
    let out0 = encoder_lan(g, l0, &block0.lan)?;
    let mut aggregate = fan_fold(g, out0.global_feat, l0, l0, &block0.fan)?;
    globals.push(out0.global_feat);
    lan_outputs.push(out0);
    for (block, &stream) in enc.blocks.iter().zip(streams).skip(1) {
        let out = encoder_lan(g, aggregate, &block.lan)?;
        let lm = project_stream(g, stream, block.input_proj)?;
        aggregate = fan_fold(g, out.global_feat, lm, aggregate, &block.fan)?;
        globals.push(out.global_feat);
        lan_outputs.push(out);
    }
    let g_tilde = g.concat(&globals)?;
    Ok(EncoderOutput {
        local_final: aggregate,
        globals,
        g_tilde,
        lan_outputs,
    })
}
