//! On-disk dataset layout and batching.
//!
//! ```text
//! <data_dir>/manifest.json        {video_id: {"streams": [relative paths], "captions": count}}
//! <data_dir>/captions.jsonl       {"video_id", "caption", "pos": [tags]} per line
//! <data_dir>/vocab.txt            one token per line, line number = index
//! <data_dir>/features/<stream>/<video_id>.vslf
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use vslan_core::fan::StreamSpec;
use vslan_core::vocab::{self, PosTag, Vocabulary, EOS, PAD};
use vslan_core::Tensor;

use crate::error::{Result, VslanError};
use crate::features;

pub const MANIFEST: &str = "manifest.json";
pub const CAPTIONS: &str = "captions.jsonl";
pub const VOCAB: &str = "vocab.txt";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub streams: Vec<String>,
    pub captions: usize,
}

pub type Manifest = BTreeMap<String, ManifestEntry>;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CaptionRecord {
    pub video_id: String,
    pub caption: String,
    pub pos: Vec<String>,
}

fn data_err(path: &Path, msg: impl std::fmt::Display) -> VslanError {
    VslanError::Data(format!("{}: {msg}", path.display()))
}

pub fn write_vocab(path: &Path, v: &Vocabulary) -> Result<()> {
    let mut text = v.tokens().join("\n");
    text.push('\n');
    fs::write(path, text).map_err(|e| VslanError::io(path, e))
}

pub fn read_vocab(path: &Path) -> Result<Vocabulary> {
    let text = fs::read_to_string(path).map_err(|e| VslanError::io(path, e))?;
    let tokens = text.lines().map(str::to_string).collect();
    Vocabulary::from_tokens(tokens).map_err(|e| data_err(path, e))
}

pub fn write_manifest(path: &Path, m: &Manifest) -> Result<()> {
    let mut text = serde_json::to_string_pretty(m).map_err(|e| data_err(path, e))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| VslanError::io(path, e))
}

pub fn read_manifest(path: &Path) -> Result<Manifest> {
    let text = fs::read_to_string(path).map_err(|e| VslanError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| data_err(path, e))
}

pub fn write_captions(path: &Path, records: &[CaptionRecord]) -> Result<()> {
    let mut out = Vec::new();
    for r in records {
        serde_json::to_writer(&mut out, r).map_err(|e| data_err(path, e))?;
        out.push(b'\n');
    }
    let mut f = fs::File::create(path).map_err(|e| VslanError::io(path, e))?;
    f.write_all(&out).map_err(|e| VslanError::io(path, e))
}

pub fn read_captions(path: &Path) -> Result<Vec<CaptionRecord>> {
    let f = fs::File::open(path).map_err(|e| VslanError::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| VslanError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line).map_err(|e| data_err(path, format!("line {}: {e}", i + 1)))?;
        out.push(rec);
    }
    Ok(out)
}

/// A caption as model targets: word ids and tag ids, both ending in EOS.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EncodedCaption {
    pub text: String,
    pub words: Vec<usize>,
    pub pos: Vec<usize>,
}

impl EncodedCaption {
    pub fn new(vocab: &Vocabulary, text: &str, tags: &[PosTag]) -> std::result::Result<Self, String> {
        let mut words = vocab.encode(text);
        if words.len() != tags.len() {
            return Err(format!(
                "caption {text:?} has {} tokens but {} POS tags",
                words.len(),
                tags.len()
            ));
        }
        if let Some(t) = tags.iter().find(|t| t.is_control()) {
            return Err(format!("caption {text:?} uses control tag {t}"));
        }
        words.push(EOS);
        let mut pos: Vec<usize> = tags.iter().map(|t| t.index()).collect();
        pos.push(PosTag::Eos.index());
        Ok(Self {
            text: text.to_string(),
            words,
            pos,
        })
    }

    /// Metric tokens of the caption text.
    pub fn tokens(&self) -> Vec<String> {
        vocab::tokenize(&self.text)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Video {
    pub id: String,
    /// One `[N, dim_m]` tensor per stream, in stack order.
    pub streams: Vec<Tensor>,
    pub captions: Vec<EncodedCaption>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub dir: PathBuf,
    pub vocab: Vocabulary,
    pub streams: Vec<StreamSpec>,
    pub videos: Vec<Video>,
}

/// Stream name of a relative feature path: its parent directory name, or
/// the file stem when there is no parent.
fn stream_name(rel: &str) -> String {
    let p = Path::new(rel);
    p.parent()
        .and_then(|d| d.file_name())
        .or_else(|| p.file_stem())
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| rel.to_string())
}

impl Dataset {
    pub fn load(dir: &Path) -> Result<Self> {
        let manifest = read_manifest(&dir.join(MANIFEST))?;
        let vocab = read_vocab(&dir.join(VOCAB))?;
        let cap_path = dir.join(CAPTIONS);
        let records = read_captions(&cap_path)?;
        if manifest.is_empty() {
            return Err(data_err(&dir.join(MANIFEST), "no videos"));
        }
        let mut by_video: BTreeMap<&str, Vec<EncodedCaption>> = BTreeMap::new();
        for r in &records {
            if !manifest.contains_key(&r.video_id) {
                return Err(data_err(&cap_path, format!("unknown video `{}`", r.video_id)));
            }
            let tags = r
                .pos
                .iter()
                .map(|s| PosTag::parse(s).ok_or_else(|| data_err(&cap_path, format!("unknown POS tag `{s}`"))))
                .collect::<Result<Vec<_>>>()?;
            let enc = EncodedCaption::new(&vocab, &r.caption, &tags).map_err(|e| data_err(&cap_path, e))?;
            by_video.entry(&r.video_id).or_default().push(enc);
        }

        let mut streams: Option<Vec<StreamSpec>> = None;
        let mut videos = Vec::with_capacity(manifest.len());
        for (id, entry) in &manifest {
            let captions = by_video.remove(id.as_str()).unwrap_or_default();
            if captions.len() != entry.captions {
                return Err(data_err(
                    &cap_path,
                    format!("video `{id}` lists {} captions, found {}", entry.captions, captions.len()),
                ));
            }
            let mut tensors = Vec::with_capacity(entry.streams.len());
            for rel in &entry.streams {
                tensors.push(features::read_features(&dir.join(rel))?);
            }
            let specs: Vec<StreamSpec> = entry
                .streams
                .iter()
                .zip(&tensors)
                .enumerate()
                .map(|(m, (rel, t))| StreamSpec {
                    stream_id: m as u32,
                    name: stream_name(rel),
                    dim: t.last_dim(),
                    order_index: m,
                })
                .collect();
            let n0 = tensors.first().map(|t| t.rows());
            if let Some((m, t)) = tensors.iter().enumerate().find(|(_, t)| Some(t.rows()) != n0) {
                return Err(VslanError::Data(format!(
                    "video `{id}`: stream `{}` has {} clips, stream `{}` has {}",
                    specs[0].name,
                    n0.unwrap_or(0),
                    specs[m].name,
                    t.rows()
                )));
            }
            match &streams {
                None => streams = Some(specs),
                Some(s) if *s != specs => {
                    return Err(VslanError::Data(format!("video `{id}` has a different stream layout")));
                }
                Some(_) => {}
            }
            videos.push(Video {
                id: id.clone(),
                streams: tensors,
                captions,
            });
        }
        let streams = streams.unwrap_or_default();
        vslan_core::fan::validate_streams(&streams).map_err(|e| VslanError::Data(e.to_string()))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            vocab,
            streams,
            videos,
        })
    }

    pub fn video_index(&self, id: &str) -> Option<usize> {
        self.videos.iter().position(|v| v.id == id)
    }

    pub fn num_examples(&self) -> usize {
        self.videos.iter().map(|v| v.captions.len()).sum()
    }

    /// Metric tokens of every video's references.
    pub fn reference_tokens(&self) -> Vec<Vec<Vec<String>>> {
        self.videos
            .iter()
            .map(|v| v.captions.iter().map(EncodedCaption::tokens).collect())
            .collect()
    }
}

/// `(video index, caption index)`.
pub type ExampleId = (usize, usize);

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Batch {
    pub examples: Vec<ExampleId>,
    /// Word targets padded with PAD to the batch maximum.
    pub words: Vec<Vec<usize>>,
    /// Tag targets padded with PAD to the batch maximum.
    pub pos: Vec<Vec<usize>>,
}

impl Batch {
    /// Non-PAD word targets in the batch.
    pub fn token_count(&self) -> usize {
        self.words.iter().flatten().filter(|&&w| w != PAD).count()
    }

    /// Examples grouped by video, videos in first-appearance order.
    pub fn by_video(&self) -> Vec<(usize, Vec<usize>)> {
        let mut groups: Vec<(usize, Vec<usize>)> = Vec::new();
        for &(v, c) in &self.examples {
            match groups.iter_mut().find(|(gv, _)| *gv == v) {
                Some((_, cs)) => cs.push(c),
                None => groups.push((v, vec![c])),
            }
        }
        groups
    }
}

fn pad_to(seqs: Vec<Vec<usize>>) -> Vec<Vec<usize>> {
    let max = seqs.iter().map(Vec::len).max().unwrap_or(0);
    seqs.into_iter()
        .map(|mut s| {
            s.resize(max, PAD);
            s
        })
        .collect()
}

/// Every example exactly once, shuffled under `seed`, in batches of
/// `batch_size` (the last may be smaller).
pub fn batch_iter(data: &Dataset, batch_size: usize, seed: u64) -> impl Iterator<Item = Batch> + '_ {
    let mut ids: Vec<ExampleId> = data
        .videos
        .iter()
        .enumerate()
        .flat_map(|(v, video)| (0..video.captions.len()).map(move |c| (v, c)))
        .collect();
    ids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let size = batch_size.max(1);
    let chunks: Vec<Vec<ExampleId>> = ids.chunks(size).map(<[ExampleId]>::to_vec).collect();
    chunks.into_iter().map(move |examples| {
        let words = examples.iter().map(|&(v, c)| data.videos[v].captions[c].words.clone()).collect();
        let pos = examples.iter().map(|&(v, c)| data.videos[v].captions[c].pos.clone()).collect();
        Batch {
            examples,
            words: pad_to(words),
            pos: pad_to(pos),
        }
    })
}
