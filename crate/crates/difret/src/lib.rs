//! Files, evaluation and command-line driver for `difret-core`.

pub use difret_core as core;

pub mod config;
pub mod error;
pub mod eval;
pub mod formats;
pub mod jsonl;
pub mod pipeline;
pub mod synth;

pub use error::{Error, Result};
