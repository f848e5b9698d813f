//! Desk-scale laboratory for multi-view video-similarity reward shaping.
//!
//! The crate learns a state-relevance function from paired comparisons of
//! video-text similarity scores produced by a synthetic multi-view oracle,
//! shapes task rewards with a reference-set-based auxiliary signal that decays
//! automatically, and demonstrates the resulting behaviors on two toy
//! continuous-control environments.

pub mod agent;
pub mod config;
pub mod env;
pub mod error;
pub mod math;
pub mod nn;
pub mod oracle;
pub mod orchestrator;
pub mod relevance;
pub mod shaping;
pub mod types;

pub use error::{Error, Result};
