//! Core numerics for white-box model surgery.
//!
//! Everything in this crate is a pure function over owned values: a
//! [`graph::ModelGraph`] goes in, a rewritten one comes out. No IO, no
//! global state, no threads. The companion `eclipse-cli` crate carries the
//! container file format and the command-line surface.

#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod detect;
pub mod error;
pub mod eval;
pub mod graph;
pub mod layer;
pub mod linalg;
mod math;
pub mod obfuscate;
pub mod pipeline;
pub mod rng;
pub mod tensor;
pub mod watermark;

pub use error::{Error, Result};
pub use graph::ModelGraph;
pub use tensor::Tensor;
