//! Core of a future n-gram sequence-to-sequence model.
//!
//! The decoder predicts the next `n` tokens at every position, each stream
//! conditioned only on the tokens before that position and on the encoded
//! source. Everything here is `no_std` + `alloc`; file formats and the
//! command-line driver live in the `fngram` crate.
#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod corpus;
pub mod error;
pub mod generation;
pub mod metrics;
pub mod model;
pub mod tensor;
pub mod tokenizer;
pub mod training;

pub use error::{Error, Result};
pub use tensor::{DType, Element, Tape, Tensor, Var};
