//! Neuromodulated policy networks trained with context-adaptation
//! meta-reinforcement learning.
//!
//! * [`autodiff`]: reverse-mode differentiation with gradient-of-gradient support.
//! * [`layers`]: standard and neuromodulated layers, policy networks.
//! * [`envs`]: 2D point navigation and the CT-graph.
//! * [`meta`]: trajectory collection, GAE, inner/outer updates, training and meta-testing.
//! * [`analysis`]: CKA representation similarity.
//! * [`config`] and [`experiment`]: run configuration and the train/test/analyze/compare pipeline.

pub mod analysis;
pub mod archive;
pub mod autodiff;
pub mod config;
pub mod envs;
pub mod experiment;
pub mod layers;
pub mod meta;
pub mod rng;
