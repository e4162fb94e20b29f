//! The training loop: VaPEn warm-up, cross-entropy pretraining, then the
//! shared cross-entropy / self-critical objective. Adam with global-norm
//! clipping throughout; a checkpoint and one JSON log line per epoch.

use std::fs;
use std::io::Write;
use std::path::PathBuf;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use vslan_core::config::TrainConfig;
use vslan_core::diffcore::{adam_step, Adam, AdamState, GradStore};
use vslan_core::metrics::{self, CorpusStats};
use vslan_core::model::{CaptionRef, LossStats, Phase, StepWeights, VslanModel};
use vslan_core::vocab::{tokenize, Vocabulary};
use vslan_core::Error as CoreError;

use crate::checkpoint::{self, Checkpoint};
use crate::config::{RewardKind, RunConfig};
use crate::dataset::{batch_iter, Dataset};
use crate::error::{Result, VslanError};
use crate::reward::{EntailmentClient, Reward};

pub const LOG_FILE: &str = "train_log.jsonl";

/// One line of the epoch log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub phase: String,
    /// Mean per-token cross-entropy; absent during warm-up.
    pub loss_xe: Option<f64>,
    /// Mean self-critical loss per example; only in the shared phase.
    pub loss_rl: Option<f64>,
    /// Mean bound per example, KL at its annealed weight.
    pub loss_elbo: f64,
    /// Mean unweighted KL per example.
    pub kl: f64,
    pub val_token_acc: f64,
    pub val_cider: f64,
    pub wall_s: f64,
}

/// Stage of 1-based `epoch` and its KL weight.
pub fn schedule(tc: &TrainConfig, epoch: usize) -> (Phase, f64) {
    let warm = tc.vapen_warmup_epochs;
    if epoch <= warm {
        (Phase::Warmup, epoch as f64 / warm as f64)
    } else if epoch <= warm + tc.xe_pretrain_epochs {
        (Phase::Xe, 1.0)
    } else {
        (Phase::Shared, 1.0)
    }
}

/// Independent stream seed for `(seed, parts...)`.
pub fn derive_seed(seed: u64, parts: &[u64]) -> u64 {
    let mut h = seed ^ 0x9e37_79b9_7f4a_7c15;
    for &p in parts {
        h ^= p.wrapping_add(0x9e37_79b9_7f4a_7c15).wrapping_add(h << 6).wrapping_add(h >> 2);
        // splitmix64 finalizer
        h = (h ^ (h >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        h = (h ^ (h >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        h ^= h >> 31;
    }
    h
}

fn numeric(e: CoreError) -> VslanError {
    match e {
        CoreError::NonFinite { op } => VslanError::Numeric(format!("non-finite value in {op}")),
        other => VslanError::Core(other),
    }
}

/// Metric tokens of generated word ids.
pub fn caption_tokens(vocab: &Vocabulary, ids: &[usize]) -> Vec<String> {
    tokenize(&vocab.decode(ids))
}

pub struct Trainer {
    pub config: RunConfig,
    pub tc: TrainConfig,
    pub data: Dataset,
    pub model: VslanModel,
    pub adam: AdamState,
    /// Last completed epoch.
    pub epoch: usize,
    refs: Vec<Vec<Vec<String>>>,
    stats: CorpusStats<String>,
    reward: Reward,
}

impl Trainer {
    pub fn new(config: RunConfig) -> Result<Self> {
        config.validate()?;
        let tc = config.train_config();
        let data = Dataset::load(&config.paths.data_dir)?;
        let (model, adam, epoch) = match &config.paths.checkpoint {
            Some(path) => {
                let ck = Checkpoint::load(path)?;
                if ck.vocab != data.vocab {
                    return Err(VslanError::Data("checkpoint vocabulary differs from the dataset".into()));
                }
                let dims: Vec<usize> = data.streams.iter().map(|s| s.dim).collect();
                let ck_dims: Vec<usize> = ck.model.encoder.streams.iter().map(|s| s.dim).collect();
                if dims != ck_dims {
                    return Err(VslanError::Data("checkpoint stream layout differs from the dataset".into()));
                }
                let adam = ck.adam.unwrap_or_else(|| AdamState::new(&ck.model.store));
                (ck.model, adam, ck.epoch)
            }
            None => {
                let spec = Checkpoint::spec(&config, &data.streams, &data.vocab);
                let model = VslanModel::new(spec, derive_seed(config.seed, &[0])).map_err(VslanError::from)?;
                let adam = AdamState::new(&model.store);
                (model, adam, 0)
            }
        };
        let refs = data.reference_tokens();
        let stats = CorpusStats::from_references(&refs);
        let reward = match config.reward.kind {
            RewardKind::BuiltinCider => Reward::Cider(stats.clone()),
            RewardKind::RemoteEntailment => {
                let endpoint = config.reward.endpoint.as_deref().unwrap_or_default();
                Reward::Entailment(EntailmentClient::new(endpoint))
            }
        };
        Ok(Self {
            config,
            tc,
            data,
            model,
            adam,
            epoch,
            refs,
            stats,
            reward,
        })
    }

    pub fn total_epochs(&self) -> usize {
        self.tc.total_epochs()
    }

    fn video_step(
        &self,
        video: usize,
        caps: &[usize],
        w: &StepWeights,
        seed: u64,
    ) -> Result<(GradStore, LossStats)> {
        let v = &self.data.videos[video];
        let refs = &self.refs[video];
        let captions: Vec<CaptionRef<'_>> = caps
            .iter()
            .map(|&c| CaptionRef {
                words: &v.captions[c].words,
                pos: &v.captions[c].pos,
            })
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut premise_rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[1]));
        let mut failure: Option<VslanError> = None;
        let out = self.model.video_gradients(&v.streams, &captions, w, &mut rng, |ids| {
            let cand = caption_tokens(&self.data.vocab, ids);
            let premise = premise_rng.random_range(0..refs.len().max(1));
            self.reward.score(&cand, refs, premise).map_err(|e| {
                let msg = e.to_string();
                failure = Some(e);
                CoreError::Reward(msg)
            })
        });
        match (out, failure) {
            (_, Some(e)) => Err(e),
            (Ok(r), None) => Ok(r),
            (Err(e), None) => Err(numeric(e)),
        }
    }

    /// Runs one epoch (1-based `self.epoch + 1`) and returns its log line.
    pub fn run_epoch(&mut self) -> Result<EpochLog> {
        let start = Instant::now();
        let epoch = self.epoch + 1;
        let (phase, kl_weight) = schedule(&self.tc, epoch);
        let seed = self.config.seed;
        let adam_cfg = Adam::new(match phase {
            Phase::Shared => self.tc.shared_phase_lr(),
            _ => self.tc.lr,
        });
        let mut totals = LossStats::default();
        let batches: Vec<_> = batch_iter(&self.data, self.tc.batch_size, derive_seed(seed, &[1, epoch as u64])).collect();
        for (b, batch) in batches.iter().enumerate() {
            let w = StepWeights {
                phase,
                kl_weight,
                per_example: 1.0 / batch.examples.len() as f64,
                per_token: 1.0 / batch.token_count().max(1) as f64,
                eta: self.tc.eta,
                max_len: self.tc.max_len,
            };
            let groups = batch.by_video();
            let results: Vec<Result<(GradStore, LossStats)>> = groups
                .par_iter()
                .map(|(v, caps)| self.video_step(*v, caps, &w, derive_seed(seed, &[2, epoch as u64, b as u64, *v as u64])))
                .collect();
            let mut grads = GradStore::zeros_like(&self.model.store);
            for r in results {
                let (g, s) = r?;
                grads.add_assign(&g);
                totals.merge(&s);
            }
            if !grads.all_finite() {
                return Err(VslanError::Numeric(format!("non-finite gradient in epoch {epoch}")));
            }
            grads.clip_global_norm(self.tc.clip_norm);
            adam_step(&mut self.model.store, &grads, &mut self.adam, &adam_cfg);
        }
        self.epoch = epoch;
        let (val_token_acc, val_cider) = self.validate()?;
        let n = totals.examples.max(1) as f64;
        Ok(EpochLog {
            epoch,
            phase: phase.as_str().to_string(),
            loss_xe: (phase != Phase::Warmup).then(|| totals.xe_sum / totals.xe_tokens.max(1) as f64),
            loss_rl: (phase == Phase::Shared).then(|| totals.rl / n),
            loss_elbo: totals.elbo / n,
            kl: totals.kl / n,
            val_token_acc,
            val_cider,
            wall_s: start.elapsed().as_secs_f64(),
        })
    }

    fn val_videos(&self) -> usize {
        self.config.train.val_videos.unwrap_or(self.data.videos.len()).min(self.data.videos.len())
    }

    /// Teacher-forced token accuracy and greedy-caption CIDEr over the
    /// validation videos.
    pub fn validate(&self) -> Result<(f64, f64)> {
        let n = self.val_videos();
        let per_video: Vec<Result<((usize, usize), f64)>> = (0..n)
            .into_par_iter()
            .map(|i| {
                let v = &self.data.videos[i];
                let caps: Vec<CaptionRef<'_>> = v
                    .captions
                    .iter()
                    .map(|c| CaptionRef {
                        words: &c.words,
                        pos: &c.pos,
                    })
                    .collect();
                let acc = self.model.token_accuracy(&v.streams, &caps).map_err(numeric)?;
                let greedy = self.model.greedy_caption(&v.streams, self.tc.max_len).map_err(numeric)?;
                let cand = caption_tokens(&self.data.vocab, &greedy);
                let c = metrics::cider(&cand, &self.refs[i], &self.stats)?;
                Ok((acc, c))
            })
            .collect();
        let (mut hit, mut total, mut cider) = (0, 0, 0.0);
        for r in per_video {
            let ((h, t), c) = r?;
            hit += h;
            total += t;
            cider += c;
        }
        Ok((hit as f64 / total.max(1) as f64, cider / n.max(1) as f64))
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            config: self.config.clone(),
            vocab: self.data.vocab.clone(),
            model: self.model.clone(),
            epoch: self.epoch,
            adam: Some(self.adam.clone()),
        }
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub logs: Vec<EpochLog>,
    pub checkpoint: PathBuf,
    pub log_path: PathBuf,
}

/// Trains to the configured epoch count, writing a checkpoint and a log
/// line after every epoch. A fresh run truncates the log; a resumed run
/// appends to it.
pub fn train(config: &RunConfig) -> Result<TrainOutcome> {
    let mut trainer = Trainer::new(config.clone())?;
    let out = &config.paths.out_dir;
    fs::create_dir_all(out).map_err(|e| VslanError::io(out, e))?;
    let ck_path = out.join(checkpoint::FILE_NAME);
    let log_path = out.join(LOG_FILE);
    let mut log = fs::OpenOptions::new()
        .create(true)
        .write(true)
        .append(config.paths.checkpoint.is_some())
        .truncate(config.paths.checkpoint.is_none())
        .open(&log_path)
        .map_err(|e| VslanError::io(&log_path, e))?;
    let mut logs = Vec::new();
    while trainer.epoch < trainer.total_epochs() {
        let line = trainer.run_epoch()?;
        log::info!(
            "epoch {} [{}] xe={:?} rl={:?} elbo={:.4} kl={:.4} acc={:.4} cider={:.3} ({:.1}s)",
            line.epoch,
            line.phase,
            line.loss_xe,
            line.loss_rl,
            line.loss_elbo,
            line.kl,
            line.val_token_acc,
            line.val_cider,
            line.wall_s
        );
        trainer.checkpoint().save(&ck_path)?;
        let mut text = serde_json::to_string(&line).expect("log line serializes");
        text.push('\n');
        log.write_all(text.as_bytes()).map_err(|e| VslanError::io(&log_path, e))?;
        log.flush().map_err(|e| VslanError::io(&log_path, e))?;
        logs.push(line);
    }
    Ok(TrainOutcome {
        logs,
        checkpoint: ck_path,
        log_path,
    })
}
