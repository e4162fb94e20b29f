//! Run configuration documents.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use vslan_core::config::{Dims, Profile, TrainConfig};
use vslan_core::synth::SynthConfig;

use crate::error::{Result, VslanError};

/// JSON Schema of [`RunConfig`].
pub const SCHEMA: &str = include_str!("../config.schema.json");

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ProfileName {
    Paper,
    #[default]
    Desk,
}

impl From<ProfileName> for Profile {
    fn from(p: ProfileName) -> Self {
        match p {
            ProfileName::Paper => Profile::Paper,
            ProfileName::Desk => Profile::Desk,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Paths {
    pub data_dir: PathBuf,
    pub out_dir: PathBuf,
    /// Checkpoint to resume training from.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<PathBuf>,
}

/// Overrides of the profile's training defaults.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainOverrides {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lr: Option<f64>,
    /// Learning rate of the shared phase.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shared_lr: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub batch_size: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub clip_norm: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vapen_warmup_epochs: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub xe_pretrain_epochs: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shared_epochs: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beam_width: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_len: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diverse_samples: Option<usize>,
    /// Videos used for per-epoch validation (default: all).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub val_videos: Option<usize>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DimsOverrides {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub z: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub z_prime: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub y: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d_h: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub word_embed: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pos_embed: Option<usize>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum RewardKind {
    #[default]
    #[serde(rename = "builtin-cider")]
    BuiltinCider,
    #[serde(rename = "remote-entailment")]
    RemoteEntailment,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RewardConfig {
    #[serde(default)]
    pub kind: RewardKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub endpoint: Option<String>,
}

/// Synthetic corpus parameters for `gen-data`; the seed is the run seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub n_videos: usize,
    pub n_clips: usize,
    pub stream_dims: Vec<usize>,
    pub captions_per_video: usize,
    pub noise_std: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        let s = SynthConfig::default();
        Self {
            n_videos: s.n_videos,
            n_clips: s.n_clips,
            stream_dims: s.stream_dims,
            captions_per_video: s.captions_per_video,
            noise_std: s.noise_std,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub profile: ProfileName,
    #[serde(default)]
    pub seed: u64,
    pub paths: Paths,
    #[serde(default)]
    pub train: TrainOverrides,
    #[serde(default)]
    pub dims: DimsOverrides,
    #[serde(default)]
    pub reward: RewardConfig,
    #[serde(default)]
    pub data: DataConfig,
}

impl RunConfig {
    pub fn new(data_dir: impl Into<PathBuf>, out_dir: impl Into<PathBuf>) -> Self {
        Self {
            profile: ProfileName::Desk,
            seed: 0,
            paths: Paths {
                data_dir: data_dir.into(),
                out_dir: out_dir.into(),
                checkpoint: None,
            },
            train: TrainOverrides::default(),
            dims: DimsOverrides::default(),
            reward: RewardConfig::default(),
            data: DataConfig::default(),
        }
    }

    /// Parses and validates a configuration document.
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| VslanError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| VslanError::Config(format!("{}: {e}", path.display())))?;
        Self::from_json(&text).map_err(|e| match e {
            VslanError::Config(m) => VslanError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn dims(&self) -> Dims {
        let mut d = Dims::for_profile(self.profile.into());
        let o = &self.dims;
        let set = |dst: &mut usize, v: Option<usize>| {
            if let Some(v) = v {
                *dst = v;
            }
        };
        set(&mut d.z, o.z);
        set(&mut d.z_prime, o.z_prime);
        set(&mut d.x, o.x);
        set(&mut d.y, o.y);
        set(&mut d.delta, o.delta);
        set(&mut d.d_h, o.d_h);
        set(&mut d.word_embed, o.word_embed);
        set(&mut d.pos_embed, o.pos_embed);
        d
    }

    pub fn train_config(&self) -> TrainConfig {
        let mut t = TrainConfig::for_profile(self.profile.into());
        t.dims = self.dims();
        let o = &self.train;
        if let Some(v) = o.eta {
            t.eta = v;
        }
        if let Some(v) = o.lr {
            t.lr = v;
        }
        if let Some(v) = o.shared_lr {
            t.shared_lr = Some(v);
        }
        if let Some(v) = o.clip_norm {
            t.clip_norm = v;
        }
        let set = |dst: &mut usize, v: Option<usize>| {
            if let Some(v) = v {
                *dst = v;
            }
        };
        set(&mut t.batch_size, o.batch_size);
        set(&mut t.vapen_warmup_epochs, o.vapen_warmup_epochs);
        set(&mut t.xe_pretrain_epochs, o.xe_pretrain_epochs);
        set(&mut t.shared_epochs, o.shared_epochs);
        set(&mut t.beam_width, o.beam_width);
        set(&mut t.max_len, o.max_len);
        set(&mut t.diverse_samples, o.diverse_samples);
        t
    }

    pub fn synth_config(&self) -> SynthConfig {
        SynthConfig {
            n_videos: self.data.n_videos,
            n_clips: self.data.n_clips,
            stream_dims: self.data.stream_dims.clone(),
            captions_per_video: self.data.captions_per_video,
            noise_std: self.data.noise_std,
            seed: self.seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.train_config().validate().map_err(|e| VslanError::Config(e.to_string()))?;
        self.synth_config().validate().map_err(|e| VslanError::Config(e.to_string()))?;
        if self.train.val_videos == Some(0) {
            return Err(VslanError::Config("val_videos must be positive".into()));
        }
        if self.reward.kind == RewardKind::RemoteEntailment && self.reward.endpoint.is_none() {
            return Err(VslanError::Config("remote-entailment reward requires an endpoint".into()));
        }
        Ok(())
    }
}
