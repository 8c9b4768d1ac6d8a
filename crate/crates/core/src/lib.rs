//! Workbench for one-way communication complexity of finite relations.
//!
//! A relation `f ⊆ X × Y × Z` is held as a dense boolean table. On top of it
//! the crate computes the distributional error `err_f`, the relative
//! min-entropy bound (`ment`) and the robust conditional relative min-entropy
//! bound (`cment`), exact distributional one-way complexity by set-partition
//! search, a Yao-style adversary game, the greedy one-way decomposition of an
//! input distribution, and one-shot message compression with shared
//! randomness.
//!
//! All logarithms are base 2. Probabilities are `f64`.

#![forbid(unsafe_code)]

pub mod bounds;
pub mod compression;
pub mod corpus;
pub mod decomposition;
pub mod dist;
mod error;
pub mod experiment;
pub mod protocols;
pub mod relations;

pub use error::{Error, Result};

/// Mass tolerance for distributions.
pub const TOL_MASS: f64 = 1e-9;

/// Slack used when comparing an error against a target `eps`.
pub const EPS_SLACK: f64 = 1e-9;
