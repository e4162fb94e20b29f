//! On-disk formats, the synthetic corpus writer and batching.

mod common;

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use proptest::prelude::*;
use vslan::dataset::{self, batch_iter, Dataset};
use vslan::features;
use vslan::synthdata::gen_synthetic;
use vslan_core::diffcore::Tensor;
use vslan_core::vocab::PAD;

fn tiny_dataset(root: &Path) -> Dataset {
    let cfg = common::tiny_config(root);
    gen_synthetic(&cfg.synth_config(), &cfg.paths.data_dir).unwrap();
    Dataset::load(&cfg.paths.data_dir).unwrap()
}

fn tree_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(dir).unwrap().to_string_lossy().into_owned();
                out.push((rel, fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn feature_files_round_trip(rows in 1usize..6, cols in 1usize..9, seed in any::<u32>()) {
        // f32 payload: use values exactly representable in f32
        let data: Vec<f64> = (0..rows * cols).map(|i| ((seed as usize + i * 37) % 1000) as f64 / 8.0 - 60.0).collect();
        let t = Tensor::new(vec![rows, cols], data).unwrap();
        let bytes = features::encode(&t).unwrap();
        prop_assert_eq!(&bytes[..4], b"VSLF");
        prop_assert_eq!(bytes.len(), 16 + 4 * rows * cols);
        prop_assert_eq!(features::decode(&bytes).unwrap(), t);
    }
}

#[test]
fn truncated_or_foreign_feature_files_are_rejected() {
    let t = Tensor::matrix(2, 3, vec![1.0; 6]).unwrap();
    let bytes = features::encode(&t).unwrap();
    assert!(features::decode(&bytes[..bytes.len() - 1]).is_err());
    let mut foreign = bytes.clone();
    foreign[0] = b'X';
    assert!(features::decode(&foreign).is_err());
}

#[test]
fn synthetic_corpus_loads_back() {
    let dir = tempfile::tempdir().unwrap();
    let data = tiny_dataset(dir.path());
    assert_eq!(data.videos.len(), 12);
    assert_eq!(data.streams.len(), 3);
    assert_eq!(data.streams[0].name, "motion");
    assert_eq!(data.streams[2].name, "object");
    for v in &data.videos {
        assert!(v.captions.len() >= 4);
        assert!(v.streams.iter().all(|s| s.rows() == 4));
        for c in &v.captions {
            assert_eq!(c.words.len(), c.pos.len());
            assert_eq!(data.vocab.decode(&c.words), c.text);
        }
    }
    let vocab = dataset::read_vocab(&dir.path().join("data").join(dataset::VOCAB)).unwrap();
    assert_eq!(vocab, data.vocab);
}

#[test]
fn same_seed_writes_identical_bytes() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    tiny_dataset(a.path());
    tiny_dataset(b.path());
    let (ta, tb) = (tree_bytes(&a.path().join("data")), tree_bytes(&b.path().join("data")));
    assert!(!ta.is_empty());
    assert_eq!(ta, tb);

    let c = tempfile::tempdir().unwrap();
    let mut cfg = common::tiny_config(c.path());
    cfg.seed += 1;
    gen_synthetic(&cfg.synth_config(), &cfg.paths.data_dir).unwrap();
    assert_ne!(ta, tree_bytes(&cfg.paths.data_dir));
}

#[test]
fn missing_captions_are_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    tiny_dataset(dir.path());
    let caps = dir.path().join("data").join(dataset::CAPTIONS);
    let text = fs::read_to_string(&caps).unwrap();
    let fewer: String = text.lines().skip(1).map(|l| format!("{l}\n")).collect();
    fs::write(&caps, fewer).unwrap();
    let err = Dataset::load(&dir.path().join("data")).unwrap_err();
    assert_eq!(err.exit_code(), 3);
}

#[test]
fn batches_partition_the_examples() {
    let dir = tempfile::tempdir().unwrap();
    let data = tiny_dataset(dir.path());
    let batches: Vec<_> = batch_iter(&data, 7, 11).collect();
    let n = data.num_examples();
    assert_eq!(batches.len(), n.div_ceil(7));
    let mut seen = BTreeSet::new();
    for b in &batches {
        assert!(b.examples.len() <= 7);
        for &e in &b.examples {
            assert!(seen.insert(e), "example {e:?} twice");
        }
    }
    assert_eq!(seen.len(), n);
}

#[test]
fn batching_is_seed_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let data = tiny_dataset(dir.path());
    let a: Vec<_> = batch_iter(&data, 5, 4).collect();
    let b: Vec<_> = batch_iter(&data, 5, 4).collect();
    let c: Vec<_> = batch_iter(&data, 5, 5).collect();
    assert_eq!(a, b);
    assert_ne!(a, c);
}

#[test]
fn padding_is_masked_out() {
    let dir = tempfile::tempdir().unwrap();
    let data = tiny_dataset(dir.path());
    for b in batch_iter(&data, 8, 1) {
        let width = b.words[0].len();
        let mut real = 0;
        for ((row, pos), &(v, c)) in b.words.iter().zip(&b.pos).zip(&b.examples) {
            assert_eq!(row.len(), width);
            assert_eq!(pos.len(), width);
            let cap = &data.videos[v].captions[c];
            assert_eq!(&row[..cap.words.len()], &cap.words[..]);
            assert!(row[cap.words.len()..].iter().all(|&w| w == PAD));
            real += cap.words.len();
        }
        assert_eq!(b.token_count(), real);
    }
}
