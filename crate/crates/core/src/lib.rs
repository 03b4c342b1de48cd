// SPDX-License-Identifier: MIT OR Apache-2.0

//! Attention-dynamics metrics and token-level credit weights.
//!
//! The crate reads offline attention dumps ([`tensor_io`]), ranks heads by
//! backward span ([`heads`]), derives per-token rhythm series such as WAAD and
//! FAI ([`rhythm`]), measures how those series couple ([`coupling`]), scores
//! counterfactual rollouts ([`perturb`]) and turns the series into per-token
//! advantage weights for RL trainers ([`credit`]). [`pipeline`] runs all of it
//! over a corpus; [`synth`] builds planted fixtures and naive reference
//! implementations for testing.

pub mod coupling;
pub mod credit;
pub mod error;
pub mod heads;
pub mod index_set;
pub mod matrix;
pub mod perturb;
pub mod pipeline;
pub mod plot;
pub mod profile;
pub mod rhythm;
pub mod synth;
pub mod tensor_io;

pub use error::{Error, Result};
pub use index_set::IndexSet;
pub use matrix::{AttentionMap, ResponseRange};

/// Semantic version of this crate, recorded in every run manifest.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
