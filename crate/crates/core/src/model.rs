//! The assembled captioner: encoder, variational POS encoder and decoder
//! over one parameter store, with per-video training losses and the
//! inference entry points.

use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::config::Dims;
use crate::decoder::{self, DecoderContext, DecoderDims, DecoderWeights, DiverseCaption, Hypothesis};
use crate::diffcore::{GradStore, Graph, ParamStore, Tensor, Var};
use crate::error::{Error, Result};
use crate::fan::{self, EncoderOutput, EncoderWeights, StreamSpec};
use crate::lan;
use crate::loss;
use crate::vapen::{self, VapenDims, VapenWeights};
use crate::vocab::{PosTag, EOS, PAD};

/// Everything needed to rebuild the parameter layout.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelSpec {
    pub dims: Dims,
    pub streams: Vec<StreamSpec>,
    pub vocab_size: usize,
}

#[derive(Clone, Debug)]
pub struct VslanModel {
    pub spec: ModelSpec,
    pub store: ParamStore,
    pub encoder: EncoderWeights,
    pub vapen: VapenWeights,
    pub decoder: DecoderWeights,
}

/// Training stage of one step.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Phase {
    /// Variational POS encoder only.
    Warmup,
    /// Cross-entropy plus the POS evidence bound.
    Xe,
    /// Cross-entropy mixed with self-critical reward, plus the POS bound.
    Shared,
}

impl Phase {
    pub fn as_str(self) -> &'static str {
        match self {
            Phase::Warmup => "warmup",
            Phase::Xe => "xe",
            Phase::Shared => "shared",
        }
    }
}

/// One caption of a video: word ids and aligned tag ids, both ending in EOS.
#[derive(Clone, Copy, Debug)]
pub struct CaptionRef<'a> {
    pub words: &'a [usize],
    pub pos: &'a [usize],
}

/// Scaling of each loss term within a batch.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepWeights {
    pub phase: Phase,
    /// Multiplier of the KL term inside the bound (annealed during warm-up).
    pub kl_weight: f64,
    /// `1 / examples in batch`, applied to bound and policy terms.
    pub per_example: f64,
    /// `1 / non-PAD target tokens in batch`, applied to cross-entropy.
    pub per_token: f64,
    pub eta: f64,
    pub max_len: usize,
}

/// Unscaled loss components of one video's examples.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossStats {
    pub xe_sum: f64,
    pub xe_tokens: usize,
    pub elbo: f64,
    pub kl: f64,
    pub recon: f64,
    pub rl: f64,
    pub examples: usize,
}

impl LossStats {
    pub fn merge(&mut self, other: &LossStats) {
        self.xe_sum += other.xe_sum;
        self.xe_tokens += other.xe_tokens;
        self.elbo += other.elbo;
        self.kl += other.kl;
        self.recon += other.recon;
        self.rl += other.rl;
        self.examples += other.examples;
    }
}

fn finite(g: &Graph<'_>, v: Var, component: &'static str) -> Result<f64> {
    let x = g.value(v).item();
    if x.is_finite() {
        Ok(x)
    } else {
        Err(Error::NonFinite { op: component })
    }
}

impl VslanModel {
    pub fn new(spec: ModelSpec, seed: u64) -> Result<Self> {
        spec.dims.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let d = spec.dims;
        let encoder = EncoderWeights::register(&mut store, &spec.streams, &d, &mut rng)?;
        let vapen = VapenWeights::register(
            &mut store,
            VapenDims {
                g_tilde: encoder.g_tilde_dim(),
                hidden: d.d_h,
                delta: d.delta,
                pos_vocab: PosTag::COUNT,
                pos_embed: d.pos_embed,
                mlp_hidden: d.d_h,
                z: d.z,
            },
            &mut rng,
        )?;
        let decoder = DecoderWeights::register(
            &mut store,
            DecoderDims {
                vocab: spec.vocab_size,
                word_embed: d.word_embed,
                d_h: d.d_h,
                z: d.z,
                z_prime: d.z_prime,
                x: d.x,
            },
            &mut rng,
        )?;
        Ok(Self {
            spec,
            store,
            encoder,
            vapen,
            decoder,
        })
    }

    /// Streams in stack order, each `[N, dim_m]`.
    pub fn encode(&self, g: &mut Graph<'_>, streams: &[Tensor]) -> Result<EncoderOutput> {
        if streams.len() != self.encoder.num_streams() {
            return Err(Error::Invalid(alloc::format!(
                "model has {} streams, got {}",
                self.encoder.num_streams(),
                streams.len()
            )));
        }
        let mut vars = Vec::with_capacity(streams.len());
        for (t, spec) in streams.iter().zip(&self.encoder.streams) {
            if t.rank() != 2 || t.last_dim() != spec.dim {
                return Err(Error::Shape {
                    op: "stream features",
                    lhs: t.shape().to_vec(),
                    rhs: alloc::vec![0, spec.dim],
                });
            }
            vars.push(g.constant(t.clone()));
        }
        fan::encode_video(g, &vars, &self.encoder)
    }

    fn noise<R: Rng + ?Sized>(&self, steps: usize, rng: &mut R) -> Vec<Tensor> {
        (0..steps)
            .map(|_| Tensor::vector((0..self.spec.dims.delta).map(|_| StandardNormal.sample(rng)).collect()))
            .collect()
    }

    /// Gradients of the weighted batch loss restricted to one video's
    /// captions. `reward(tokens)` scores a generated caption (without EOS)
    /// and is only called in the shared phase.
    pub fn video_gradients<R, F>(
        &self,
        streams: &[Tensor],
        captions: &[CaptionRef<'_>],
        w: &StepWeights,
        rng: &mut R,
        mut reward: F,
    ) -> Result<(GradStore, LossStats)>
    where
        R: Rng + ?Sized,
        F: FnMut(&[usize]) -> Result<f64>,
    {
        let mut g = Graph::with_params(&self.store);
        let enc = self.encode(&mut g, streams)?;
        let memory = lan::prepare_memory(&mut g, enc.local_final, enc.local_final, &self.decoder.lan)?;
        let mut terms = Vec::new();
        let mut stats = LossStats::default();
        for cap in captions {
            if cap.words.len() != cap.pos.len() {
                return Err(Error::Invalid(alloc::format!(
                    "caption has {} words but {} tags",
                    cap.words.len(),
                    cap.pos.len()
                )));
            }
            stats.examples += 1;
            let noise = self.noise(cap.pos.len(), rng);
            let el = vapen::elbo(&mut g, cap.pos, enc.g_tilde, &self.vapen, &noise)?;
            stats.kl += finite(&g, el.kl, "kl")?;
            stats.recon += finite(&g, el.recon, "pos reconstruction")?;
            let kl = g.scale(el.kl, w.kl_weight);
            let bound = g.add(kl, el.recon)?;
            stats.elbo += finite(&g, bound, "loss_elbo")?;
            terms.push(g.scale(bound, w.per_example));
            if w.phase == Phase::Warmup {
                continue;
            }
            let ctx = DecoderContext { memory, g_bar: el.g_bar };
            let logits = decoder::teacher_forced(&mut g, cap.words, &ctx, &self.decoder)?;
            let (sum, n) = loss::xe_sum(&mut g, &logits, cap.words)?;
            let Some(sum) = sum else { continue };
            stats.xe_sum += finite(&g, sum, "loss_xe")?;
            stats.xe_tokens += n;
            let xe = g.scale(sum, w.per_token);
            if w.phase == Phase::Xe {
                terms.push(xe);
                continue;
            }
            let (sample, logp) = decoder::sample_decode(&mut g, &ctx, &self.decoder, w.max_len, rng)?;
            let greedy = decoder::greedy_decode(&mut g, &ctx, &self.decoder, w.max_len)?;
            let r_s = reward(strip_eos(&sample))?;
            let r_b = reward(strip_eos(&greedy))?;
            let rl = loss::scst_loss(&mut g, logp, r_s, r_b);
            stats.rl += finite(&g, rl, "loss_rl")?;
            let rl = g.scale(rl, w.per_example);
            terms.push(loss::shared_loss(&mut g, xe, rl, w.eta)?);
        }
        if terms.is_empty() {
            return Err(Error::Empty { op: "video_gradients" });
        }
        let total = g.add_n(&terms)?;
        finite(&g, total, "total loss")?;
        let grads = g.backward(total)?;
        let mut out = GradStore::zeros_like(&self.store);
        grads.accumulate_params(&g, &mut out);
        Ok((out, stats))
    }

    /// Teacher-forced argmax hits over non-PAD targets, with `Ḡ` from the
    /// posterior mean trajectory of the gold tags. Returns `(correct, total)`.
    pub fn token_accuracy(&self, streams: &[Tensor], captions: &[CaptionRef<'_>]) -> Result<(usize, usize)> {
        let mut g = Graph::with_params(&self.store);
        let enc = self.encode(&mut g, streams)?;
        let memory = lan::prepare_memory(&mut g, enc.local_final, enc.local_final, &self.decoder.lan)?;
        let (mut hit, mut total) = (0, 0);
        for cap in captions {
            let zero: Vec<Tensor> = (0..cap.pos.len()).map(|_| Tensor::zeros(&[self.spec.dims.delta])).collect();
            let el = vapen::elbo(&mut g, cap.pos, enc.g_tilde, &self.vapen, &zero)?;
            let ctx = DecoderContext { memory, g_bar: el.g_bar };
            let logits = decoder::teacher_forced(&mut g, cap.words, &ctx, &self.decoder)?;
            for (&l, &t) in logits.iter().zip(cap.words) {
                if t == PAD {
                    continue;
                }
                let v = g.value(l).data();
                let best = (0..v.len()).fold(0, |b, i| if v[i] > v[b] { i } else { b });
                hit += usize::from(best == t);
                total += 1;
            }
        }
        Ok((hit, total))
    }

    /// Encoder output and the mode-rollout `Ḡ`, the single global feature
    /// used for deterministic captioning.
    fn mode_context<'g>(&self, g: &mut Graph<'g>, streams: &[Tensor], max_len: usize) -> Result<(EncoderOutput, DecoderContext)> {
        let enc = self.encode(g, streams)?;
        let roll = vapen::mode_rollout(g, enc.g_tilde, &self.vapen, max_len)?;
        let ctx = decoder::prepare_context(g, enc.local_final, roll.g_bar, &self.decoder)?;
        Ok((enc, ctx))
    }

    pub fn greedy_caption(&self, streams: &[Tensor], max_len: usize) -> Result<Vec<usize>> {
        let mut g = Graph::with_params(&self.store);
        let (_, ctx) = self.mode_context(&mut g, streams, max_len)?;
        decoder::greedy_decode(&mut g, &ctx, &self.decoder, max_len)
    }

    /// Ranked beam hypotheses as `(tokens, log_prob)`.
    pub fn beam_captions(&self, streams: &[Tensor], width: usize, max_len: usize) -> Result<Vec<(Vec<usize>, f64)>> {
        let mut g = Graph::with_params(&self.store);
        let (_, ctx) = self.mode_context(&mut g, streams, max_len)?;
        let hyps: Vec<Hypothesis> = decoder::beam_decode(&mut g, &ctx, &self.decoder, width, max_len)?;
        Ok(hyps.into_iter().map(|h| (h.tokens, h.log_prob)).collect())
    }

    pub fn diverse_captions(
        &self,
        streams: &[Tensor],
        n_samples: usize,
        seed: u64,
        width: usize,
        max_len: usize,
    ) -> Result<Vec<DiverseCaption>> {
        let mut g = Graph::with_params(&self.store);
        let enc = self.encode(&mut g, streams)?;
        decoder::diverse_decode(
            &mut g,
            enc.local_final,
            enc.g_tilde,
            &self.vapen,
            &self.decoder,
            n_samples,
            seed,
            width,
            max_len,
        )
    }
}

/// Tokens before the first EOS.
pub fn strip_eos(tokens: &[usize]) -> &[usize] {
    let end = tokens.iter().position(|&t| t == EOS).unwrap_or(tokens.len());
    &tokens[..end]
}
