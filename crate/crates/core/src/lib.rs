//! Coordinate-based MLPs and the CoordX split architecture.
//!
//! A baseline coordinate MLP maps every point of an `N × K` coordinate grid
//! through `D` fully connected layers. CoordX instead splits the input
//! coordinates into `C` branches, runs the first `D_s` layers on each branch's
//! per-axis coordinates only (`Σ B_i` rows instead of `N = Π B_i`), fuses the
//! branch features with a broadcast outer product and finishes with `D_f`
//! ordinary layers on the fused `N` points.
//!
//! The crate is organized bottom-up:
//!
//! - [`tensor`], [`rng`], [`exec`]: dense arithmetic, deterministic randomness
//!   and the rayon/sequential execution switch.
//! - [`encoding`], [`grid`]: input encodings, SIREN initialization and grid
//!   decomposition.
//! - [`model`]: architecture description, parameters, forward/backward passes
//!   and multiply-add accounting.
//! - [`sampler`], [`train`]: decomposable batch sampling, losses, Adam and
//!   the fitting loop.
//! - [`signal`], [`pnm`], [`metrics`]: fitting targets, image I/O, PSNR/IoU.
//! - [`bench`], [`render`], [`checkpoint`]: speedup validation, volume
//!   rendering, persistence.

pub mod bench;
pub mod checkpoint;
pub mod encoding;
pub mod error;
pub mod exec;
pub mod grid;
pub mod metrics;
pub mod model;
pub mod pnm;
pub mod render;
pub mod rng;
pub mod sampler;
pub mod scalar;
pub mod signal;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use grid::{CoordGrid, DecomposedGrid};
pub use model::{Model, ModelParams, ModelSpec};
pub use rng::Rng;
pub use scalar::Scalar;
pub use tensor::Tensor;
