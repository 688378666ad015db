//! Robust training for time-series classifiers.
//!
//! The crate is organized around a global-alignment kernel (GAK) between time
//! series, a stochastic compositional min-max solver (SCAGDA), a small
//! manually-differentiated 1D-CNN, and the RO-TS training loop that ties them
//! together. Supporting modules provide adversarial/noise baselines, a
//! synthetic compositional benchmark with grid-search oracles, and seeded
//! named RNG streams so every run is reproducible bit-for-bit.

pub mod align;
pub mod attacks;
pub mod checkpoint;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod net;
pub mod plbench;
pub mod rng;
pub mod rots;
pub mod scagda;
pub mod trace;

pub use error::CoreError;

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, CoreError>;
