#![allow(dead_code)]

use std::path::Path;

use vslan::config::{DimsOverrides, RunConfig};

/// A corpus and model small enough to train an epoch in well under a second.
pub fn tiny_config(root: &Path) -> RunConfig {
    let mut cfg = RunConfig::new(root.join("data"), root.join("out"));
    cfg.seed = 3;
    cfg.data.n_videos = 12;
    cfg.data.n_clips = 4;
    cfg.train.batch_size = Some(16);
    cfg.train.vapen_warmup_epochs = Some(1);
    cfg.train.xe_pretrain_epochs = Some(1);
    cfg.train.shared_epochs = Some(1);
    cfg.train.max_len = Some(12);
    cfg.dims = DimsOverrides {
        z: Some(16),
        z_prime: Some(8),
        x: Some(4),
        y: Some(8),
        delta: Some(4),
        d_h: Some(16),
        word_embed: Some(8),
        pos_embed: Some(4),
    };
    cfg
}

pub fn write_config(cfg: &RunConfig, path: &Path) {
    std::fs::write(path, cfg.to_json()).unwrap();
}
