//! Differentiable link-level building blocks for a polar-coded integrated
//! data-and-energy (IDEN) transmission chain.
//!
//! The crate is `no_std` (with `alloc`): everything here is pure computation
//! driven by explicit RNG handles. File formats, the CLI and the parallel
//! sweep driver live in the companion `iden` crate.
//!
//! Sign convention, used everywhere: a positive LLR means bit 0 is more
//! likely, and probabilities / logits refer to P(bit = 1).

#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod bp;
pub mod checkpoint;
pub mod eh;
mod error;
pub mod harness;
pub mod nn;
pub mod phy;
pub mod polar;
pub mod reference;
pub mod rng;
pub mod stats;
pub mod system;
pub mod train;

pub use error::{Error, Result};

/// Magnitude limit applied to every channel LLR and BP message.
pub const LLR_CLIP: f64 = 30.0;
/// Prior LLR placed on frozen positions of the leftmost BP layer.
pub const FROZEN_LLR: f64 = 100.0;
