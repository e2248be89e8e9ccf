//! Numerical core for decoding emotional brain states from fMRI volumes.
//!
//! Two decoding routes are provided:
//!
//! - **Route A**: brain-mask the volumes, pick the most class-informative voxels with a
//!   one-way ANOVA F-test, map every subject into a shared space with orthogonal
//!   Procrustes hyperalignment, then classify the aligned voxel vectors with a 1D CNN.
//! - **Route B**: classify whole volumes with a 3D bottleneck residual network.
//!
//! Both routes share the evaluation harness in [`eval`] (leave-one-subject-out folds,
//! random splits, bootstrap class balancing, and the metric suite).
//!
//! The crate is `no_std` and only needs `alloc`. File formats, timing and the CLI live in
//! the companion `brainstate` crate. Enabling the `std` feature switches the matrix
//! product to runtime-dispatched SIMD kernels.
#![no_std]
#![deny(rust_2018_idioms)]

extern crate alloc;
#[cfg(feature = "std")]
extern crate std;

pub mod anova;
pub mod error;
pub mod eval;
pub mod hyperalign;
mod inf_json;
pub mod linalg;
pub(crate) mod math;
pub mod models;
pub mod nn;
pub mod rng;
pub mod synth;
pub mod volume;

pub use error::{Error, Result};
pub use linalg::Matrix;
