//! Instruction-following navigation over topological graph memory.
//!
//! The crate is organised bottom-up:
//!
//! * [`tensor`], [`autograd`], [`nn`], [`gradcheck`]: fp64 tensors, a
//!   reverse-mode tape and the attention / MLP blocks built on it.
//! * [`env`]: synthetic undirected navigation worlds, observations, geodesics
//!   and episode synthesis.
//! * [`latent`] and [`prompt`]: the frozen toy vision-language latent provider
//!   and the text prompt renderers.
//! * [`policy`]: graph memory, node encoding, graph-aware attention, masked
//!   global action scoring and rollouts.
//! * [`train`]: behaviour cloning + DAgger, AdamW with warmup/cosine schedule,
//!   checkpoints.
//! * [`eval`]: TL / NE / SR / OSR / SPL / nDTW / sDTW.

pub mod autograd;
pub mod benchmark;
pub mod config;
pub mod dataset;
pub mod env;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod gradsuite;
pub mod latent;
pub mod model;
pub mod nn;
pub mod policy;
pub mod prompt;
pub mod rng;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::Tensor;
