//! Groundwater-flow surrogate workbench: ground-truth generation with a
//! finite-difference Darcy solver over heterogeneous conductivity fields, and
//! an attention U-Net trained to replace it.
//!
//! The crate is organised as a pipeline:
//!
//! - [`grid`]: grids, scenarios, masks, conductivity/head fields, samples;
//! - [`grf`]: Gaussian random conductivity fields via circulant embedding;
//! - [`fdsolver`]: steady-state Darcy solve (conjugate gradients);
//! - [`datagen`]: scenario sampling and the on-disk dataset format;
//! - [`nn`]: tensors and differentiable layer primitives;
//! - [`model`]: the attention U-Net and its checkpoint format;
//! - [`train`]: loss, optimiser, training loop, metrics, uncertainty.

pub mod datagen;
pub mod error;
pub mod fdsolver;
pub mod grf;
pub mod grid;
pub mod model;
pub mod nn;
pub mod train;

pub use error::{Error, Result};
