//! Caption generation from a checkpoint.

use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::dataset::Dataset;
use crate::error::{Result, VslanError};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankedCaption {
    pub caption: String,
    pub log_prob: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CaptionOutput {
    pub video_id: String,
    pub captions: Vec<RankedCaption>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiverseSample {
    pub caption: String,
    pub pos: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiverseOutput {
    pub video_id: String,
    pub seed: u64,
    pub samples: Vec<DiverseSample>,
}

fn video<'a>(data: &'a Dataset, ck: &Checkpoint, id: &str) -> Result<&'a crate::dataset::Video> {
    if data.vocab != ck.vocab {
        return Err(VslanError::Data("dataset vocabulary differs from the checkpoint".into()));
    }
    data.video_index(id)
        .map(|i| &data.videos[i])
        .ok_or_else(|| VslanError::Data(format!("unknown video `{id}`")))
}

/// The `beam` best beam-search captions under the single deterministic `Ḡ`.
pub fn caption(ck: &Checkpoint, data: &Dataset, video_id: &str, beam: usize, max_len: usize) -> Result<CaptionOutput> {
    let v = video(data, ck, video_id)?;
    let hyps = ck.model.beam_captions(&v.streams, beam, max_len)?;
    Ok(CaptionOutput {
        video_id: video_id.to_string(),
        captions: hyps
            .into_iter()
            .take(beam)
            .map(|(tokens, log_prob)| RankedCaption {
                caption: ck.vocab.decode(&tokens),
                log_prob,
            })
            .collect(),
    })
}

/// `n` captions, one per sampled POS trajectory.
pub fn sample_diverse(
    ck: &Checkpoint,
    data: &Dataset,
    video_id: &str,
    n: usize,
    seed: u64,
    beam: usize,
    max_len: usize,
) -> Result<DiverseOutput> {
    let v = video(data, ck, video_id)?;
    let samples = ck.model.diverse_captions(&v.streams, n, seed, beam, max_len)?;
    Ok(DiverseOutput {
        video_id: video_id.to_string(),
        seed,
        samples: samples
            .into_iter()
            .map(|s| DiverseSample {
                caption: ck.vocab.decode(&s.tokens),
                pos: s
                    .pos
                    .iter()
                    .filter(|t| !t.is_control())
                    .map(|t| t.as_str().to_string())
                    .collect(),
            })
            .collect(),
    })
}
