//! Host side of the vslan captioner: feature and checkpoint files, the
//! dataset layout and synthetic corpus writer, the training loop, reward
//! services, evaluation and the mock entailment server.

pub mod checkpoint;
pub mod config;
pub mod dataset;
pub mod error;
pub mod evaluate;
pub mod features;
pub mod inference;
pub mod mock;
pub mod reward;
pub mod synthdata;
pub mod train;

pub use error::{Result, VslanError};
