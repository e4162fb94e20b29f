//! Scores prediction files: `{"video_id", "captions": [..], "references": [..]}`
//! per line.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use vslan_core::metrics::{self, CorpusStats};
use vslan_core::vocab::tokenize;

use crate::error::{Result, VslanError};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictionRecord {
    pub video_id: String,
    pub captions: Vec<String>,
    pub references: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    /// Corpus BLEU-4 of each video's first caption.
    pub bleu4: f64,
    /// Mean CIDEr of each video's first caption; document frequencies come
    /// from the references in the file.
    pub cider: f64,
    #[serde(rename = "rougeL")]
    pub rouge_l: f64,
    /// Over videos with at least two captions; `null` if there are none.
    pub mbleu4: Option<f64>,
    pub div1: Option<f64>,
    pub div2: Option<f64>,
}

pub fn read_predictions(path: &Path) -> Result<Vec<PredictionRecord>> {
    let text = fs::read_to_string(path).map_err(|e| VslanError::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| VslanError::Data(format!("{}:{}: {e}", path.display(), i + 1)))
        })
        .collect()
}

pub fn evaluate(records: &[PredictionRecord]) -> Result<MetricsReport> {
    if records.is_empty() {
        return Err(VslanError::Data("no predictions to evaluate".into()));
    }
    let mut firsts = Vec::with_capacity(records.len());
    let mut refs = Vec::with_capacity(records.len());
    let mut sets = Vec::with_capacity(records.len());
    for r in records {
        if r.captions.is_empty() || r.references.is_empty() {
            return Err(VslanError::Data(format!(
                "video `{}` needs at least one caption and one reference",
                r.video_id
            )));
        }
        let caps: Vec<Vec<String>> = r.captions.iter().map(|c| tokenize(c)).collect();
        firsts.push(caps[0].clone());
        refs.push(r.references.iter().map(|c| tokenize(c)).collect::<Vec<_>>());
        sets.push(caps);
    }
    let stats = CorpusStats::from_references(&refs);
    let bleu4 = metrics::bleu4(&firsts, &refs)?;
    let cider = metrics::corpus_cider(&firsts, &refs, &stats)?;
    let rouge_l = firsts.iter().zip(&refs).map(|(c, r)| metrics::rouge_l(c, r)).sum::<f64>() / firsts.len() as f64;
    let multi: Vec<Vec<Vec<String>>> = sets.iter().filter(|s| s.len() >= 2).cloned().collect();
    let mbleu4 = if multi.is_empty() { None } else { Some(metrics::mbleu4(&multi)?) };
    Ok(MetricsReport {
        bleu4,
        cider,
        rouge_l,
        mbleu4,
        div1: metrics::div_n(&sets, 1).ok(),
        div2: metrics::div_n(&sets, 2).ok(),
    })
}
