//! Synthetic captioning corpus.
//!
//! A video is a [`SceneProgram`] (subject, verb, object, location). Each
//! feature stream sees a masked one-hot encoding of the program through a
//! fixed random projection plus Gaussian clip noise: the first stream mostly
//! carries the action, the last one the object and place. Captions come
//! from templates with distinct POS sequences, and gold tags are emitted
//! with every caption.

use alloc::string::String;
use alloc::vec::Vec;
use alloc::{format, vec};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::diffcore::Tensor;
use crate::error::{Error, Result};
use crate::vocab::PosTag;

pub const SUBJECTS: [&str; 8] = ["man", "woman", "dog", "cat", "boy", "girl", "chef", "player"];
/// `(-ing form, third-person form)`.
pub const VERBS: [(&str, &str); 8] = [
    ("playing", "plays"),
    ("cutting", "cuts"),
    ("riding", "rides"),
    ("throwing", "throws"),
    ("holding", "holds"),
    ("pushing", "pushes"),
    ("eating", "eats"),
    ("washing", "washes"),
];
pub const OBJECTS: [&str; 8] = ["ball", "guitar", "car", "bike", "box", "bottle", "apple", "book"];
pub const LOCATIONS: [&str; 6] = ["kitchen", "park", "street", "room", "field", "garden"];
pub const FUNCTION_WORDS: [&str; 7] = ["a", "the", "is", "in", "there", "and", "quickly"];

const FIELD_SIZES: [usize; 4] = [SUBJECTS.len(), VERBS.len(), OBJECTS.len(), LOCATIONS.len()];
pub const PROGRAM_DIM: usize = SUBJECTS.len() + VERBS.len() + OBJECTS.len() + LOCATIONS.len();

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SceneProgram {
    pub subject: usize,
    pub verb: usize,
    pub object: usize,
    pub location: usize,
}

impl SceneProgram {
    pub fn random<R: Rng + ?Sized>(rng: &mut R) -> Self {
        Self {
            subject: rng.random_range(0..SUBJECTS.len()),
            verb: rng.random_range(0..VERBS.len()),
            object: rng.random_range(0..OBJECTS.len()),
            location: rng.random_range(0..LOCATIONS.len()),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ids = [self.subject, self.verb, self.object, self.location];
        for (i, (&id, &size)) in ids.iter().zip(&FIELD_SIZES).enumerate() {
            if id >= size {
                let what = ["subject", "verb", "object", "location"][i];
                return Err(Error::Invalid(format!("{what} id {id} out of range {size}")));
            }
        }
        Ok(())
    }

    /// Concatenated one-hot fields scaled per field by `mask`.
    pub fn encode(&self, mask: &[f64; 4]) -> Vec<f64> {
        let mut out = vec![0.0; PROGRAM_DIM];
        let ids = [self.subject, self.verb, self.object, self.location];
        let mut offset = 0;
        for f in 0..4 {
            out[offset + ids[f]] = mask[f];
            offset += FIELD_SIZES[f];
        }
        out
    }
}

/// Per-field weights `[subject, verb, object, location]` that stream `m` of
/// `m_total` observes.
pub fn information_mask(m: usize, m_total: usize) -> [f64; 4] {
    match (m_total, m) {
        (1, _) => [1.0, 1.0, 1.0, 1.0],
        (_, 0) => [0.5, 1.0, 0.0, 0.0],
        (2, _) => [0.5, 0.0, 1.0, 1.0],
        (t, m) if m + 1 == t => [0.0, 0.0, 1.0, 1.0],
        _ => [1.0, 0.5, 0.5, 0.0],
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Slot {
    Lit(&'static str, PosTag),
    Subj,
    Ving,
    Vs,
    Obj,
    Loc,
}

use PosTag as P;
use Slot::*;

const TEMPLATES: [&[Slot]; 8] = [
    &[Lit("a", P::Det), Subj, Lit("is", P::Verb), Ving, Lit("a", P::Det), Obj],
    &[Lit("the", P::Det), Subj, Vs, Lit("the", P::Det), Obj, Lit("in", P::Adp), Lit("the", P::Det), Loc],
    &[Lit("in", P::Adp), Lit("the", P::Det), Loc, Lit("a", P::Det), Subj, Lit("is", P::Verb), Ving],
    &[Lit("there", P::Pron), Lit("is", P::Verb), Lit("a", P::Det), Subj, Ving, Lit("a", P::Det), Obj],
    &[Lit("a", P::Det), Subj, Vs, Lit("a", P::Det), Obj],
    &[Lit("the", P::Det), Subj, Lit("is", P::Verb), Ving, Lit("in", P::Adp), Lit("the", P::Det), Loc],
    &[Lit("a", P::Det), Subj, Lit("is", P::Verb), Lit("quickly", P::Adv), Ving, Lit("a", P::Det), Obj],
    &[Lit("a", P::Det), Subj, Lit("and", P::Conj), Lit("a", P::Det), Obj, Lit("in", P::Adp), Lit("the", P::Det), Loc],
];

pub const NUM_TEMPLATES: usize = TEMPLATES.len();

/// Caption text and gold tags for template `t` (taken modulo the template count).
pub fn render(program: &SceneProgram, t: usize) -> (String, Vec<PosTag>) {
    let mut words: Vec<&str> = Vec::new();
    let mut tags = Vec::new();
    for slot in TEMPLATES[t % NUM_TEMPLATES] {
        let (w, tag) = match *slot {
            Lit(w, tag) => (w, tag),
            Subj => (SUBJECTS[program.subject], P::Noun),
            Ving => (VERBS[program.verb].0, P::Verb),
            Vs => (VERBS[program.verb].1, P::Verb),
            Obj => (OBJECTS[program.object], P::Noun),
            Loc => (LOCATIONS[program.location], P::Noun),
        };
        words.push(w);
        tags.push(tag);
    }
    (words.join(" "), tags)
}

/// Every word any template can produce, in a fixed order.
pub fn vocabulary_words() -> Vec<&'static str> {
    let mut out: Vec<&str> = FUNCTION_WORDS.to_vec();
    out.extend(SUBJECTS);
    for (ing, s) in VERBS {
        out.push(ing);
        out.push(s);
    }
    out.extend(OBJECTS);
    out.extend(LOCATIONS);
    out
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    pub n_videos: usize,
    pub n_clips: usize,
    pub stream_dims: Vec<usize>,
    pub captions_per_video: usize,
    pub noise_std: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_videos: 200,
            n_clips: 8,
            stream_dims: vec![24, 16, 20],
            captions_per_video: 4,
            noise_std: 0.1,
            seed: 7,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_videos == 0 || self.n_clips == 0 || self.captions_per_video == 0 {
            return Err(Error::Config("n_videos, n_clips and captions_per_video must be positive".into()));
        }
        if self.stream_dims.is_empty() || self.stream_dims.contains(&0) {
            return Err(Error::Config("every stream needs a positive dimension".into()));
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return Err(Error::Config(format!("noise_std must be non-negative, got {}", self.noise_std)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthCaption {
    pub text: String,
    pub pos: Vec<PosTag>,
    pub template: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthVideo {
    pub id: String,
    pub program: SceneProgram,
    /// One `[n_clips, dim_m]` tensor per stream.
    pub streams: Vec<Tensor>,
    pub captions: Vec<SynthCaption>,
}

/// Fixed random projections and masks of one generator.
#[derive(Clone, Debug)]
pub struct SynthGenerator {
    pub config: SynthConfig,
    /// `A_m`, `[dim_m, PROGRAM_DIM]`.
    pub projections: Vec<Tensor>,
    rng: ChaCha8Rng,
}

impl SynthGenerator {
    pub fn new(config: SynthConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let projections = config
            .stream_dims
            .iter()
            .map(|&d| {
                let data = (0..d * PROGRAM_DIM).map(|_| StandardNormal.sample(&mut rng)).collect();
                Tensor::new(vec![d, PROGRAM_DIM], data)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { config, projections, rng })
    }

    /// Clip-constant feature mean of stream `m` for `program`.
    pub fn noiseless_mean(&self, program: &SceneProgram, m: usize) -> Vec<f64> {
        let a = &self.projections[m];
        let code = program.encode(&information_mask(m, self.projections.len()));
        (0..a.rows()).map(|r| crate::math::dot(a.row(r), &code)).collect()
    }

    pub fn video(&mut self, index: usize) -> Result<SynthVideo> {
        let program = SceneProgram::random(&mut self.rng);
        self.video_for(index, program)
    }

    pub fn video_for(&mut self, index: usize, program: SceneProgram) -> Result<SynthVideo> {
        program.validate()?;
        let n = self.config.n_clips;
        let noise = Normal::new(0.0, self.config.noise_std).map_err(|e| Error::Config(format!("{e}")))?;
        let mut streams = Vec::with_capacity(self.projections.len());
        for m in 0..self.projections.len() {
            let mean = self.noiseless_mean(&program, m);
            let mut data = Vec::with_capacity(n * mean.len());
            for _ in 0..n {
                for &mu in &mean {
                    data.push(mu + noise.sample(&mut self.rng));
                }
            }
            streams.push(Tensor::new(vec![n, mean.len()], data)?);
        }
        let mut order: Vec<usize> = (0..NUM_TEMPLATES).collect();
        order.shuffle(&mut self.rng);
        let captions = (0..self.config.captions_per_video)
            .map(|i| {
                let t = order[i % NUM_TEMPLATES];
                let (text, pos) = render(&program, t);
                SynthCaption { text, pos, template: t }
            })
            .collect();
        Ok(SynthVideo {
            id: format!("video{index:04}"),
            program,
            streams,
            captions,
        })
    }

    pub fn generate(mut self) -> Result<Vec<SynthVideo>> {
        (0..self.config.n_videos).map(|i| self.video(i)).collect()
    }
}

/// Whole dataset for `config`.
pub fn generate(config: SynthConfig) -> Result<Vec<SynthVideo>> {
    SynthGenerator::new(config)?.generate()
}
