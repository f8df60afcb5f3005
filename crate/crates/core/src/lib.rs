//! Low-resolution image enhancement with a DCGAN cascaded into a compact
//! single-shot detector, plus the evaluation tooling to measure what the
//! enhancement buys on small, distant objects.

pub mod cli;
pub mod data_io;
pub mod detector;
pub mod error;
pub mod evalkit;
pub mod gan;
pub mod nn;
pub mod tensor_core;

pub use error::{Error, Result};
