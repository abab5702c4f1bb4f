//! Few-shot slot tagging engine.
//!
//! A query sentence is tagged with a linear-chain CRF whose emission scores
//! come from similarity to label representations built on a tiny support set
//! and whose transition scores are expanded from a 19-cell table over abstract
//! `O`/`B`/`I` labels, so they carry over to label sets never seen in training.
//!
//! The numeric modules are generic over [`Scalar`] (`f32` or `f64`); the
//! aliases below fix the precision used by the command line tool.

pub mod corpus;
pub mod crf;
pub mod embeddings;
pub mod emission;
pub mod episodes;
pub mod error;
pub mod evaluation;
pub mod scalar;
pub mod synthetic;
pub mod training;
pub mod transition;

pub use corpus::{Domain, LabelSet, Sentence, Tag};
pub use error::{Error, Result};
pub use scalar::Scalar;

/// Log-space value used in place of minus infinity.
pub const NEG_INF: f64 = -1e30;
/// Log-space values at or below this are impossible.
pub const IMPOSSIBLE_THRESHOLD: f64 = -1e29;








pub type ModelState64 = training::ModelState<f64>;
pub type ModelState32 = training::ModelState<f32>;
pub type CollapsedTable64 = transition::CollapsedTransitionTable<f64>;
pub type CollapsedTable32 = transition::CollapsedTransitionTable<f32>;
pub type ReferencePool64 = emission::ReferencePool<f64>;
pub type ReferencePool32 = emission::ReferencePool<f32>;
