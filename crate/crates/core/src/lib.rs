//! Generative document retrieval with a masked discrete diffusion denoiser.
//!
//! Documents are given short discrete identifiers (residual-quantized codes or
//! title words), a small bidirectional transformer learns to recover those
//! identifiers from queries under a masked-diffusion objective, and retrieval
//! runs parallel iterative denoising with a configurable step budget.
//!
//! The crate is `no_std` (with `alloc`). File formats, timing and the command
//! line live in the companion `difret` crate.
#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod corpus;
pub mod diffusion;
pub mod docid;
pub mod denoiser;
pub mod metrics;
pub mod sampler;

mod error;
mod linalg;

pub use error::{Error, Result};

/// Identifier of a token in a [`corpus::Vocabulary`].
pub type TokenId = u32;
