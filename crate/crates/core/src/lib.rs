//! Allocation-only core of the rearrange rearrangement pipeline.
//!
//! Everything here is pure computation over owned buffers: a reverse-mode
//! autodiff tensor engine, SE(3) geometry over parametric primitives, the
//! structured instruction language, procedural scene synthesis, the
//! selection and pose-generation networks, and the training/evaluation
//! logic. File formats, the CLI and anything touching the OS live in the
//! `rearrange` companion crate.
#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod error;
pub mod geometry;
pub mod lang;
pub mod math;
pub mod model;
pub mod rng;
pub mod scenegen;
pub mod tensor;
pub mod traineval;

pub use error::{Error, Result};
