//! Tile-based high-resolution depth refinement at desk scale.
//!
//! The library implements a two-branch architecture: a coarse branch that
//! predicts a global depth map from a downsampled view of the image, and a
//! lightweight per-patch refiner branch that predicts a residual correction
//! on top of the coarse prediction for every tile of the full-resolution
//! canvas. Refiner features are denoised under coarse-feature guidance
//! (coarse-to-fine pass with gated shortcut units) before a fine-to-coarse
//! decoder emits the residual. Training covers noisy pretraining of the
//! refiner branch, coarse-only training, end-to-end training, and a
//! pseudo-label transfer stage with scale/shift-invariant losses.
//!
//! Numeric code is generic over the scalar type through [`substrate::Scalar`]
//! (`f32` or `f64`). Training and persistence use `f32`; gradient
//! verification in the test suites instantiates `f64`.

pub mod dataio;
pub mod depth;
pub mod error;
pub mod losses;
pub mod metrics;
pub mod models;
pub mod pipeline;
pub mod scenegen;
pub mod substrate;
pub mod tiling;

pub use error::{Error, Result};

/// Scalar type used by the training pipeline and all persisted artifacts.
pub type Real = f32;

pub type Tensor32 = substrate::Tensor<f32>;
pub type Tensor64 = substrate::Tensor<f64>;
pub type Graph32 = substrate::Graph<f32>;
pub type Graph64 = substrate::Graph<f64>;
pub type ParamStore32 = substrate::ParamStore<f32>;
pub type ParamStore64 = substrate::ParamStore<f64>;
