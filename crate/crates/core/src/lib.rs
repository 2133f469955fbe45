//! Actor-context relation modeling head for video action detection.
//!
//! The crate is `no_std` (it needs `alloc`) and holds every numerical piece
//! of the head:
//!
//! - [`tape`]: a small dense tensor engine with reverse-mode gradients.
//! - [`frontend`]: RoIAlign, pooling and channel reduction that turn a video
//!   feature map and actor boxes into actor and context features.
//! - [`cycle`]: actor-to-context reorganization followed by context-to-actor
//!   enhancement, in a per-frame (local) and a pooled (global) branch.
//! - [`head`]: the context-aware memory bank, alternating clip/bank instance
//!   interaction, the multi-label classifier and score fusion.
//! - [`model`]: the assembled head with its parameter registry.
//! - [`synth`]: synthetic scenes whose labels depend on context outside the
//!   actor boxes.
//! - [`metrics`], [`optim`], [`codec`]: average precision, SGD with warmup
//!   and step decay, and the binary tensor format.
//!
//! File IO, the training loop and the command line live in the `cycleacr`
//! companion crate.

#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod codec;
pub mod cycle;
mod error;
pub mod frontend;
pub mod gradcheck;
pub mod head;
pub mod layers;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod param;
mod rng;
pub mod synth;
pub mod tape;
mod tensor;

pub use error::{Error, Result};
pub use rng::Rng;
pub use tensor::Tensor;

/// Floating point width used by every kernel.
#[cfg(not(feature = "f32"))]
pub type Real = f64;
/// Floating point width used by every kernel.
#[cfg(feature = "f32")]
pub type Real = f32;
