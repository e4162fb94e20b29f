//! Caption quality and diversity metrics over token sequences.
//!
//! Every function is generic over the token type, so callers can score
//! word strings or vocabulary indices alike.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math;

pub const MAX_N: usize = 4;
pub const ROUGE_BETA_SQ: f64 = 1.2;
pub const CIDER_SCALE: f64 = 10.0;

pub type NGramCounts<T> = BTreeMap<Vec<T>, usize>;

pub fn ngram_counts<T: Ord + Clone>(tokens: &[T], n: usize) -> NGramCounts<T> {
    let mut out = BTreeMap::new();
    if n == 0 || tokens.len() < n {
        return out;
    }
    for win in tokens.windows(n) {
        *out.entry(win.to_vec()).or_insert(0) += 1;
    }
    out
}

fn closest_ref_len<T>(cand_len: usize, refs: &[Vec<T>]) -> usize {
    refs.iter()
        .map(|r| r.len())
        .min_by_key(|&l| (l.abs_diff(cand_len), l))
        .unwrap_or(0)
}

/// Corpus BLEU-4: clipped n-gram precisions pooled over the corpus, uniform
/// weights, add-one smoothing on orders 2-4, brevity penalty against the
/// closest reference length.
pub fn bleu4<T: Ord + Clone>(candidates: &[Vec<T>], references: &[Vec<Vec<T>>]) -> Result<f64> {
    if candidates.is_empty() {
        return Err(Error::Empty { op: "bleu4" });
    }
    if candidates.len() != references.len() {
        return Err(Error::Invalid(alloc::format!(
            "bleu4: {} candidates but {} reference sets",
            candidates.len(),
            references.len()
        )));
    }
    let mut matches = [0usize; MAX_N];
    let mut totals = [0usize; MAX_N];
    let (mut cand_len, mut ref_len) = (0usize, 0usize);
    for (cand, refs) in candidates.iter().zip(references) {
        if refs.is_empty() {
            return Err(Error::Empty { op: "bleu4 references" });
        }
        cand_len += cand.len();
        ref_len += closest_ref_len(cand.len(), refs);
        for n in 1..=MAX_N {
            let counts = ngram_counts(cand, n);
            let mut max_ref: NGramCounts<T> = BTreeMap::new();
            for r in refs {
                for (g, c) in ngram_counts(r, n) {
                    let e = max_ref.entry(g).or_insert(0);
                    *e = (*e).max(c);
                }
            }
            for (g, c) in &counts {
                matches[n - 1] += (*c).min(max_ref.get(g).copied().unwrap_or(0));
            }
            totals[n - 1] += cand.len().saturating_sub(n - 1);
        }
    }
    if cand_len == 0 || matches[0] == 0 {
        return Ok(0.0);
    }
    let mut log_p = math::ln(matches[0] as f64 / totals[0] as f64);
    for n in 1..MAX_N {
        log_p += math::ln((matches[n] + 1) as f64 / (totals[n] + 1) as f64);
    }
    let bp = if cand_len > ref_len {
        0.0
    } else {
        1.0 - ref_len as f64 / cand_len as f64
    };
    Ok(math::exp(log_p / MAX_N as f64 + bp))
}

/// BLEU-4 of one candidate against its references.
pub fn sentence_bleu4<T: Ord + Clone>(candidate: &[T], references: &[Vec<T>]) -> Result<f64> {
    bleu4(&[candidate.to_vec()], &[references.to_vec()])
}

/// Document frequencies for CIDEr; one document is one video's reference set.
#[derive(Clone, Debug, PartialEq)]
pub struct CorpusStats<T: Ord> {
    pub doc_freq: [NGramCounts<T>; MAX_N],
    pub num_docs: usize,
}

impl<T: Ord + Clone> CorpusStats<T> {
    pub fn from_references(docs: &[Vec<Vec<T>>]) -> Self {
        let mut doc_freq: [NGramCounts<T>; MAX_N] = Default::default();
        for refs in docs {
            for (n, df) in doc_freq.iter_mut().enumerate() {
                let mut seen = BTreeSet::new();
                for r in refs {
                    seen.extend(ngram_counts(r, n + 1).into_keys());
                }
                for g in seen {
                    *df.entry(g).or_insert(0) += 1;
                }
            }
        }
        Self {
            doc_freq,
            num_docs: docs.len(),
        }
    }

    /// `1 + ln(N / max(df, 1))`.
    pub fn idf(&self, n: usize, gram: &[T]) -> f64 {
        let df = self.doc_freq[n - 1].get(gram).copied().unwrap_or(0).max(1);
        1.0 + math::ln(self.num_docs as f64 / df as f64)
    }

    fn tfidf(&self, tokens: &[T], n: usize) -> BTreeMap<Vec<T>, f64> {
        ngram_counts(tokens, n)
            .into_iter()
            .map(|(g, c)| {
                let w = c as f64 * self.idf(n, &g);
                (g, w)
            })
            .collect()
    }
}

fn cosine<T: Ord>(a: &BTreeMap<Vec<T>, f64>, b: &BTreeMap<Vec<T>, f64>) -> f64 {
    let na: f64 = a.values().map(|v| v * v).sum();
    let nb: f64 = b.values().map(|v| v * v).sum();
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    let dot: f64 = a.iter().filter_map(|(g, v)| b.get(g).map(|w| v * w)).sum();
    dot / (math::sqrt(na) * math::sqrt(nb))
}

/// Plain CIDEr: mean over n = 1..4 of the average TF-IDF cosine between the
/// candidate and each reference, times 10. No length penalty.
pub fn cider<T: Ord + Clone>(candidate: &[T], references: &[Vec<T>], stats: &CorpusStats<T>) -> Result<f64> {
    if stats.num_docs == 0 {
        return Err(Error::Empty { op: "cider corpus" });
    }
    if references.is_empty() {
        return Err(Error::Empty { op: "cider references" });
    }
    let mut total = 0.0;
    for n in 1..=MAX_N {
        let c = stats.tfidf(candidate, n);
        let sum: f64 = references.iter().map(|r| cosine(&c, &stats.tfidf(r, n))).sum();
        total += sum / references.len() as f64;
    }
    Ok(CIDER_SCALE * total / MAX_N as f64)
}

/// Mean CIDEr over a corpus of candidates.
pub fn corpus_cider<T: Ord + Clone>(candidates: &[Vec<T>], references: &[Vec<Vec<T>>], stats: &CorpusStats<T>) -> Result<f64> {
    if candidates.is_empty() || candidates.len() != references.len() {
        return Err(Error::Invalid("corpus_cider needs one reference set per candidate".into()));
    }
    let mut sum = 0.0;
    for (c, r) in candidates.iter().zip(references) {
        sum += cider(c, r, stats)?;
    }
    Ok(sum / candidates.len() as f64)
}

pub fn lcs_len<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut row = alloc::vec![0usize; b.len() + 1];
    for x in a {
        let mut diag = 0;
        for (j, y) in b.iter().enumerate() {
            let up = row[j + 1];
            row[j + 1] = if x == y { diag + 1 } else { up.max(row[j]) };
            diag = up;
        }
    }
    row[b.len()]
}

/// LCS F-measure with `β² = 1.2`, maximized over references.
pub fn rouge_l<T: PartialEq>(candidate: &[T], references: &[Vec<T>]) -> f64 {
    let mut best = 0.0f64;
    for r in references {
        let l = lcs_len(candidate, r);
        if l == 0 {
            continue;
        }
        let p = l as f64 / candidate.len() as f64;
        let rec = l as f64 / r.len() as f64;
        let f = (1.0 + ROUGE_BETA_SQ) * p * rec / (rec + ROUGE_BETA_SQ * p);
        best = best.max(f);
    }
    best
}

/// Mean leave-one-out sentence BLEU-4 within one caption set.
pub fn mbleu4_set<T: Ord + Clone>(captions: &[Vec<T>]) -> Result<f64> {
    if captions.len() < 2 {
        return Err(Error::Invalid("mbleu4 needs at least two captions per video".into()));
    }
    let mut sum = 0.0;
    for (i, c) in captions.iter().enumerate() {
        let others: Vec<Vec<T>> = captions
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != i)
            .map(|(_, o)| o.clone())
            .collect();
        sum += sentence_bleu4(c, &others)?;
    }
    Ok(sum / captions.len() as f64)
}

/// `mbleu4_set` averaged over videos; lower means more diverse.
pub fn mbleu4<T: Ord + Clone>(captions_per_video: &[Vec<Vec<T>>]) -> Result<f64> {
    if captions_per_video.is_empty() {
        return Err(Error::Empty { op: "mbleu4" });
    }
    let mut sum = 0.0;
    for v in captions_per_video {
        sum += mbleu4_set(v)?;
    }
    Ok(sum / captions_per_video.len() as f64)
}

/// Distinct n-grams over total n-grams within one caption set, or `None`
/// when the set has no n-grams.
pub fn div_n_set<T: Ord + Clone>(captions: &[Vec<T>], n: usize) -> Option<f64> {
    let mut distinct = BTreeSet::new();
    let mut total = 0usize;
    for c in captions {
        if n == 0 || c.len() < n {
            continue;
        }
        for w in c.windows(n) {
            distinct.insert(w.to_vec());
            total += 1;
        }
    }
    (total > 0).then(|| distinct.len() as f64 / total as f64)
}

/// Per-video `div_n_set` averaged over videos with at least one n-gram.
pub fn div_n<T: Ord + Clone>(captions_per_video: &[Vec<Vec<T>>], n: usize) -> Result<f64> {
    let scores: Vec<f64> = captions_per_video.iter().filter_map(|v| div_n_set(v, n)).collect();
    if scores.is_empty() {
        return Err(Error::Empty { op: "div_n" });
    }
    Ok(scores.iter().sum::<f64>() / scores.len() as f64)
}
