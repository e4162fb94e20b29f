//! Versioned binary checkpoints.
//!
//! Layout (little-endian): magic `VSLN`, `u32` format version, `u32` header
//! length and a JSON header (run config, model layout, vocabulary, epoch),
//! `u32` parameter count, then per parameter `u32` name length, name bytes,
//! `u32` rank, `u32` dims and `f64` values. An optimizer section follows:
//! `u8` presence flag and, if set, `u64` step and the first and second
//! moments of every parameter in the same order.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use vslan_core::config::Dims;
use vslan_core::diffcore::AdamState;
use vslan_core::fan::StreamSpec;
use vslan_core::model::{ModelSpec, VslanModel};
use vslan_core::vocab::Vocabulary;
use vslan_core::Tensor;

use crate::config::RunConfig;
use crate::error::{Result, VslanError};

pub const MAGIC: [u8; 4] = *b"VSLN";
pub const VERSION: u32 = 1;
pub const FILE_NAME: &str = "checkpoint.vsln";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DimsRecord {
    z: usize,
    z_prime: usize,
    x: usize,
    y: usize,
    delta: usize,
    d_h: usize,
    word_embed: usize,
    pos_embed: usize,
}

impl From<Dims> for DimsRecord {
    fn from(d: Dims) -> Self {
        Self {
            z: d.z,
            z_prime: d.z_prime,
            x: d.x,
            y: d.y,
            delta: d.delta,
            d_h: d.d_h,
            word_embed: d.word_embed,
            pos_embed: d.pos_embed,
        }
    }
}

impl From<DimsRecord> for Dims {
    fn from(d: DimsRecord) -> Self {
        Self {
            z: d.z,
            z_prime: d.z_prime,
            x: d.x,
            y: d.y,
            delta: d.delta,
            d_h: d.d_h,
            word_embed: d.word_embed,
            pos_embed: d.pos_embed,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct StreamRecord {
    name: String,
    dim: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    config: RunConfig,
    dims: DimsRecord,
    streams: Vec<StreamRecord>,
    vocab: Vec<String>,
    /// Last completed epoch.
    epoch: usize,
}

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub config: RunConfig,
    pub vocab: Vocabulary,
    pub model: VslanModel,
    pub epoch: usize,
    pub adam: Option<AdamState>,
}

fn corrupt(path: &Path, msg: impl std::fmt::Display) -> VslanError {
    VslanError::Data(format!("checkpoint {}: {msg}", path.display()))
}

fn put_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&(v as u32).to_le_bytes());
}

fn put_f64s(out: &mut Vec<u8>, t: &Tensor) {
    for &x in t.data() {
        out.extend_from_slice(&x.to_le_bytes());
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], String> {
        let end = self.at.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| format!("truncated at byte {}", self.at))?;
        let s = &self.bytes[self.at..end];
        self.at = end;
        Ok(s)
    }

    fn u32(&mut self) -> std::result::Result<usize, String> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")) as usize)
    }

    fn u64(&mut self) -> std::result::Result<u64, String> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64s(&mut self, n: usize) -> std::result::Result<Vec<f64>, String> {
        let raw = self.take(n.checked_mul(8).ok_or("length overflow")?)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }
}

impl Checkpoint {
    pub fn spec(config: &RunConfig, streams: &[StreamSpec], vocab: &Vocabulary) -> ModelSpec {
        ModelSpec {
            dims: config.dims(),
            streams: streams.to_vec(),
            vocab_size: vocab.len(),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = Header {
            config: self.config.clone(),
            dims: self.model.spec.dims.into(),
            streams: self
                .model
                .encoder
                .streams
                .iter()
                .map(|s| StreamRecord {
                    name: s.name.clone(),
                    dim: s.dim,
                })
                .collect(),
            vocab: self.vocab.tokens().to_vec(),
            epoch: self.epoch,
        };
        let json = serde_json::to_vec(&header).expect("header serializes");
        let mut out = Vec::with_capacity(64 + json.len() + 8 * self.model.store.num_values() * 3);
        out.extend_from_slice(&MAGIC);
        put_u32(&mut out, VERSION as usize);
        put_u32(&mut out, json.len());
        out.extend_from_slice(&json);
        put_u32(&mut out, self.model.store.len());
        for (_, p) in self.model.store.iter() {
            put_u32(&mut out, p.name.len());
            out.extend_from_slice(p.name.as_bytes());
            put_u32(&mut out, p.tensor.rank());
            for &d in p.tensor.shape() {
                put_u32(&mut out, d);
            }
            put_f64s(&mut out, &p.tensor);
        }
        match &self.adam {
            None => out.push(0),
            Some(a) => {
                out.push(1);
                out.extend_from_slice(&a.step.to_le_bytes());
                for t in a.m.iter().chain(&a.v) {
                    put_f64s(&mut out, t);
                }
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let mut r = Reader { bytes, at: 0 };
        let e = |m: String| corrupt(path, m);
        if r.take(4).map_err(e)? != MAGIC {
            return Err(corrupt(path, "bad magic"));
        }
        let version = r.u32().map_err(e)?;
        if version != VERSION as usize {
            return Err(corrupt(path, format!("unsupported version {version}")));
        }
        let len = r.u32().map_err(e)?;
        let header: Header = serde_json::from_slice(r.take(len).map_err(e)?).map_err(|x| corrupt(path, x))?;
        let vocab = Vocabulary::from_tokens(header.vocab).map_err(|x| corrupt(path, x))?;
        let streams: Vec<StreamSpec> = header
            .streams
            .iter()
            .enumerate()
            .map(|(m, s)| StreamSpec {
                stream_id: m as u32,
                name: s.name.clone(),
                dim: s.dim,
                order_index: m,
            })
            .collect();
        let spec = ModelSpec {
            dims: header.dims.into(),
            streams,
            vocab_size: vocab.len(),
        };
        let mut model = VslanModel::new(spec, 0).map_err(|x| corrupt(path, x))?;
        let count = r.u32().map_err(e)?;
        if count != model.store.len() {
            return Err(corrupt(path, format!("{count} parameters, model has {}", model.store.len())));
        }
        for _ in 0..count {
            let n = r.u32().map_err(e)?;
            let name = std::str::from_utf8(r.take(n).map_err(e)?).map_err(|x| corrupt(path, x))?.to_string();
            let rank = r.u32().map_err(e)?;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(r.u32().map_err(e)?);
            }
            let values = r.f64s(shape.iter().product()).map_err(e)?;
            let id = model.store.id(&name).map_err(|x| corrupt(path, x))?;
            let t = Tensor::new(shape, values).map_err(|x| corrupt(path, x))?;
            model.store.set(id, t).map_err(|x| corrupt(path, format!("{name}: {x}")))?;
        }
        let adam = match r.take(1).map_err(e)?[0] {
            0 => None,
            1 => {
                let mut state = AdamState::new(&model.store);
                state.step = r.u64().map_err(e)?;
                for t in state.m.iter_mut().chain(state.v.iter_mut()) {
                    let vals = r.f64s(t.len()).map_err(e)?;
                    t.data_mut().copy_from_slice(&vals);
                }
                Some(state)
            }
            f => return Err(corrupt(path, format!("bad optimizer flag {f}"))),
        };
        if r.at != bytes.len() {
            return Err(corrupt(path, "trailing bytes"));
        }
        Ok(Self {
            config: header.config,
            vocab,
            model,
            epoch: header.epoch,
            adam,
        })
    }

    /// Writes through a temporary file so a crash never leaves a torn file.
    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("vsln.tmp");
        fs::write(&tmp, self.to_bytes()).map_err(|e| VslanError::io(&tmp, e))?;
        fs::rename(&tmp, path).map_err(|e| VslanError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| VslanError::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }
}
