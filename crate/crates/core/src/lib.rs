//! Core of a stacked local-attention video captioner.
//!
//! Everything here is `no_std` (with `alloc`): a small reverse-mode
//! differentiation engine over dense `f64` tensors, the local attention
//! network, the multi-stream feature aggregation encoder, the variational
//! part-of-speech encoder, the caption decoder with greedy/beam/diverse
//! generation, the training losses, caption metrics, and the synthetic
//! scene generator. File formats, the training loop, reward services and
//! the command line live in the `vslan` crate.

#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod config;
pub mod decoder;
pub mod diffcore;
pub mod error;
pub mod fan;
pub mod lan;
pub mod loss;
pub mod math;
pub mod metrics;
pub mod model;
pub mod synth;
pub mod vapen;
pub mod vocab;

pub use config::{Dims, Profile, TrainConfig};
pub use diffcore::{Gradients, Graph, ParamId, ParamStore, Tensor, Var};
pub use error::{Error, Result};
pub use model::VslanModel;
