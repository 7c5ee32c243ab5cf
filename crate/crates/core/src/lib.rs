//! Self-supervised audio representation learning by alternating offline
//! clustering of encoder embeddings with pseudo-label prediction on augmented
//! log-mel inputs, plus frozen-probe and fine-tuning evaluation harnesses.

pub mod archive;
pub mod cli;
pub mod clustering;
pub mod config;
pub mod data;
pub mod downstream;
pub mod error;
pub mod frontend;
pub mod model;
pub mod sampler;
pub mod synthetic;
pub mod trainer;
mod util;

pub use error::{Error, Result};
pub use util::{derive_seed, mix_seed, stable_hash};
