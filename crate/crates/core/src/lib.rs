//! Two-stage pursuit-evasion game laboratory.
//!
//! A pursuer ("Blue") chases an evader ("Red") over two equal stages of a
//! fixed-horizon game. This crate provides:
//!
//! - [`game`]: the deterministic game itself — kinematics, Red's evasion
//!   rule, the scripted pursuer used for data generation, and full-episode
//!   simulation;
//! - [`dataset`]: batch episode generation, normalization statistics,
//!   train/test splitting, and CSV/JSON persistence;
//! - [`neural`]: a minimal fully-connected network engine with reverse-mode
//!   gradients and an adaptive-moment optimizer;
//! - [`cgan`]: conditional adversarial training of action generators and
//!   conditioned sampling;
//! - [`scorer`]: the quality-score system (stage-2 scores from end-point
//!   distances, stage-1 scores from Monte-Carlo rollouts of a trained
//!   stage-2 generator);
//! - [`policy`]: the sequential two-step decision model, single-step and
//!   randomized benchmarks, and best-of-K response ranking;
//! - [`eval`]: paired statistical assessment, violation counting,
//!   score-sensitivity sweeps, and multi-seed experiments.

pub mod cgan;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod game;
pub mod manifest;
pub mod neural;
pub mod policy;
pub mod rng;
pub mod scorer;
pub mod textio;

pub use error::{Error, Result};

/// Tool identity stamped into provenance lines and manifests.
pub const TOOL_NAME: &str = "pursuitlab";
/// Crate version stamped into provenance lines and manifests.
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");
