//! Hierarchical imitation learning with language-derived sub-goals.
//!
//! The pipeline: deterministic gridworld environments ([`env`]), an expert
//! demonstrator and ground-truth sub-goal oracle ([`expert`]), sub-goal space
//! derivation and state labeling ([`labeler`]), a small dense neural substrate
//! with reverse-mode gradients ([`nn`]), the dual-encoder model with a
//! transition-augmented low-level policy ([`model`]), comparison methods
//! ([`baselines`]), joint training with confidence-weight updates
//! ([`trainer`]), and post-training measurement ([`eval`]).

pub mod baselines;
pub mod checkpoint;
pub mod data;
pub mod env;
pub mod error;
pub mod eval;
pub mod expert;
pub mod labeler;
pub mod model;
pub mod nn;
pub mod trainer;

pub use error::{Result, SealError};
