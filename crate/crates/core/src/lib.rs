//! Set-wise reflective learning for LLM-agent recommendation.
//!
//! The crate is organised around the assess → validate → reflect loop:
//!
//! * [`partition`] splits an ordered candidate set into overlapping windows.
//! * [`assessment`] asks an agent [`backend`] to judge each window jointly.
//! * [`validation`] turns the judgments into a set-wise mismatch loss.
//! * [`reflection`] rewrites the textual user profile and item descriptions
//!   when the loss crosses the configured threshold.
//! * [`training`] drives the loop over user histories with checkpointing.
//! * [`data`] and [`eval`] cover ingestion, leave-one-out splits, NDCG and
//!   the BM25 / random baselines.

pub mod assessment;
pub mod backend;
pub mod data;
pub mod domain;
pub mod error;
pub mod eval;
pub mod partition;
pub mod reflection;
pub mod seed;
pub mod template;
pub mod text;
pub mod training;
pub mod validation;

pub use error::{Error, Result};
