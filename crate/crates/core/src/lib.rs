//! Joint classification and rationale generation for a tiny decoder-only
//! transformer.
//!
//! The crate is `no_std` (with `alloc`). It contains everything that is pure
//! computation: a small reverse-mode autodiff substrate, the dual-head model
//! with LoRA adapters, prompt assembly and output parsing, synthetic tasks
//! with oracle teacher and judge, explanation-augmented data construction by
//! rejection sampling, the joint training loop, and the metric and
//! evaluation suites. File formats, the command line, and remote model
//! clients live in the `dualhead` crate.

#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod datagen;
pub mod evalsuite;
pub mod metrics;
pub mod model;
pub mod rng;
pub mod synth;
pub mod tensor;
pub mod textproto;
pub mod training;


pub use tensor::{Real, Tensor, TensorError};
