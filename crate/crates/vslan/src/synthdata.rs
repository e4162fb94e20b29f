//! Writes the synthetic corpus in the on-disk dataset layout.

use std::fs;
use std::path::Path;

use vslan_core::synth::{self, SynthConfig};
use vslan_core::vocab::Vocabulary;

use crate::dataset::{self, CaptionRecord, Manifest, ManifestEntry};
use crate::error::{Result, VslanError};
use crate::features;

/// Stream directory names, coarse action first.
pub fn stream_names(m_total: usize) -> Vec<String> {
    (0..m_total)
        .map(|m| match m {
            0 => "motion".to_string(),
            m if m + 1 == m_total => "object".to_string(),
            m => format!("appearance{m}"),
        })
        .collect()
}

pub fn synth_vocabulary() -> Vocabulary {
    Vocabulary::with_words(synth::vocabulary_words()).expect("synthetic word list is duplicate free")
}

/// Generates the corpus for `config` into `out`, which is created if needed.
pub fn gen_synthetic(config: &SynthConfig, out: &Path) -> Result<()> {
    let videos = synth::generate(config.clone()).map_err(|e| VslanError::Config(e.to_string()))?;
    fs::create_dir_all(out).map_err(|e| VslanError::io(out, e))?;
    let names = stream_names(config.stream_dims.len());
    let mut manifest = Manifest::new();
    let mut records = Vec::new();
    for v in &videos {
        let mut paths = Vec::with_capacity(v.streams.len());
        for (t, name) in v.streams.iter().zip(&names) {
            let rel = format!("features/{name}/{}.vslf", v.id);
            features::write_features(&out.join(&rel), t)?;
            paths.push(rel);
        }
        manifest.insert(
            v.id.clone(),
            ManifestEntry {
                streams: paths,
                captions: v.captions.len(),
            },
        );
        for c in &v.captions {
            records.push(CaptionRecord {
                video_id: v.id.clone(),
                caption: c.text.clone(),
                pos: c.pos.iter().map(|t| t.as_str().to_string()).collect(),
            });
        }
    }
    dataset::write_vocab(&out.join(dataset::VOCAB), &synth_vocabulary())?;
    dataset::write_captions(&out.join(dataset::CAPTIONS), &records)?;
    dataset::write_manifest(&out.join(dataset::MANIFEST), &manifest)
}
