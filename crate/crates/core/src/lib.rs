//! Memory-efficient remote photoplethysmography (rPPG).
//!
//! The crate provides a small frame-aligned pulse-extraction network built
//! from per-frame convolutions and temporal state-space blocks. Each block
//! normalizes its features over time (least-squares detrending in chunk mode,
//! a recursive moving average in flow mode) and mixes them with a diagonal
//! state-space model whose parallel chunk form and single-step recurrence
//! compute the same outputs. The recurrence carries a fixed-size state, so a
//! stream of any length is processed frame by frame in constant memory.
//!
//! Modules:
//! - [`data`]: frame tensors, the `METR` container, signal CSV, synthetic clips
//! - [`tn`]: temporal normalization (chunk and flow)
//! - [`ssd`]: zero-order-hold discretization, chunk and step evaluation
//! - [`model`]: encoder + temporal blocks + head, checkpoints
//! - [`train`]: MSE, reverse-mode gradients, Adam, training loop
//! - [`signal`]: heart-rate estimation, metrics, green-channel baseline
//! - [`eval`]: chunked evaluation grids and chunk/flow comparison
//! - [`bench`]: latency, memory and FLOP accounting

pub mod bench;
pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod model;
pub mod real;
pub mod signal;
pub mod ssd;
pub mod tn;
pub mod train;

pub use error::{Error, Result};
pub use real::Real;

#[cfg(test)]
#[global_allocator]
static TEST_ALLOC: bench::alloc::TrackingAllocator = bench::alloc::TrackingAllocator;
