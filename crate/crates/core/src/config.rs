//! Model dimensions and training hyperparameters.

use alloc::format;

use crate::error::{Error, Result};

/// Size profile: the published dimensions or a desk-scale override.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Profile {
    Paper,
    Desk,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Dims {
    /// Unified attention size.
    pub z: usize,
    /// Inner width of the attention score projection.
    pub z_prime: usize,
    /// Squeeze width of the global gate (must be < z).
    pub x: usize,
    /// Bilinear width of the aggregation fold.
    pub y: usize,
    /// Latent dimension of the variational POS encoder.
    pub delta: usize,
    /// LSTM hidden size (decoder and POS encoder).
    pub d_h: usize,
    pub word_embed: usize,
    pub pos_embed: usize,
}

impl Dims {
    pub fn for_profile(profile: Profile) -> Self {
        match profile {
            Profile::Paper => Self {
                z: 1024,
                z_prime: 512,
                x: 256,
                y: 512,
                delta: 64,
                d_h: 1024,
                word_embed: 300,
                pos_embed: 32,
            },
            Profile::Desk => Self {
                z: 64,
                z_prime: 32,
                x: 16,
                y: 32,
                delta: 16,
                d_h: 64,
                word_embed: 32,
                pos_embed: 16,
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        let all = [
            self.z,
            self.z_prime,
            self.x,
            self.y,
            self.delta,
            self.d_h,
            self.word_embed,
            self.pos_embed,
        ];
        if all.contains(&0) {
            return Err(Error::Config(format!("all dimensions must be positive: {self:?}")));
        }
        if self.x >= self.z {
            return Err(Error::Config(format!(
                "squeeze dimension x={} must be smaller than z={}",
                self.x, self.z
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainConfig {
    /// Weight of cross-entropy in the shared loss.
    pub eta: f64,
    pub lr: f64,
    /// Learning rate of the shared phase; `None` keeps `lr`.
    pub shared_lr: Option<f64>,
    pub batch_size: usize,
    pub clip_norm: f64,
    pub vapen_warmup_epochs: usize,
    pub xe_pretrain_epochs: usize,
    /// Epochs of shared (XE + SCST) training after pretraining.
    pub shared_epochs: usize,
    pub beam_width: usize,
    pub max_len: usize,
    pub diverse_samples: usize,
    pub dims: Dims,
}

impl TrainConfig {
    pub fn for_profile(profile: Profile) -> Self {
        // The desk model is ~1000x smaller and trains for minutes, so it
        // uses a larger step, reduced once the policy gradient starts.
        let (lr, shared_lr) = match profile {
            Profile::Paper => (1e-4, None),
            Profile::Desk => (3e-3, Some(3e-4)),
        };
        Self {
            eta: 0.3,
            lr,
            shared_lr,
            batch_size: 64,
            clip_norm: 10.0,
            vapen_warmup_epochs: 50,
            xe_pretrain_epochs: 10,
            shared_epochs: 10,
            beam_width: 5,
            max_len: 25,
            diverse_samples: 10,
            dims: Dims::for_profile(profile),
        }
    }

    pub fn shared_phase_lr(&self) -> f64 {
        self.shared_lr.unwrap_or(self.lr)
    }

    pub fn total_epochs(&self) -> usize {
        self.vapen_warmup_epochs + self.xe_pretrain_epochs + self.shared_epochs
    }

    pub fn validate(&self) -> Result<()> {
        self.dims.validate()?;
        if !(0.0..=1.0).contains(&self.eta) {
            return Err(Error::Config(format!("eta must lie in [0, 1], got {}", self.eta)));
        }
        for lr in [self.lr, self.shared_phase_lr()] {
            if !(lr > 0.0 && lr.is_finite()) {
                return Err(Error::Config(format!("learning rates must be positive, got {lr}")));
            }
        }
        if !(self.clip_norm > 0.0) {
            return Err(Error::Config(format!("clip_norm must be positive, got {}", self.clip_norm)));
        }
        if self.batch_size == 0 || self.beam_width == 0 || self.max_len == 0 || self.diverse_samples == 0 {
            return Err(Error::Config(
                "batch_size, beam_width, max_len and diverse_samples must be positive".into(),
            ));
        }
        Ok(())
    }
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::for_profile(Profile::Paper)
    }
}
