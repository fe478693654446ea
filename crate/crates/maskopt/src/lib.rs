//! Optical proximity correction driven by reinforcement learning.
//!
//! The crate is organized as a pipeline: [`layout`] models rectilinear clip
//! geometry and its fragmentation into movable edge segments, [`litho`]
//! simulates printing and measures edge placement error, [`encode`] turns the
//! neighborhood of each segment into fixed-size squish-pattern tensors,
//! [`graph`] connects nearby segments, [`policy`] scores per-segment moves
//! with a convolutional/graph/recurrent network, [`modulator`] biases move
//! selection toward the measured error, and [`rl`] ties everything into
//! episodes and the two-phase training loop. [`synth`] generates synthetic
//! clips, [`config`] reads run configuration files, and [`render`] draws
//! inspection images.

pub mod config;
pub mod encode;
pub mod graph;
pub mod layout;
pub mod litho;
pub mod modulator;
pub mod policy;
pub mod render;
pub mod rl;
pub mod synth;
