//! Unsupervised point cloud completion from single-view depth scans.
//!
//! The crate is `no_std` (with `alloc`) and contains every algorithmic piece
//! of the pipeline: a small reverse-mode autodiff engine, exact k-nearest
//! neighbor search, per-point position/curvature pattern encodings, the
//! pattern retrieval network, a differentiable point-splat renderer with
//! density-aware radii, the adversarial depth-map discriminator, all losses
//! and metrics, and the synthetic scan generator.
//!
//! File formats, dataset layout and the command line live in the `pcc`
//! companion crate.
#![no_std]

extern crate alloc;
#[cfg(any(test, feature = "std"))]
extern crate std;

pub mod autodiff;
pub mod camera;
pub mod cloud;
pub mod eigen;
pub mod encodings;
mod error;
pub mod gradsuite;
pub mod image;
pub mod knn;
pub mod losses;
pub mod man;
pub mod metrics;
pub mod nn;
pub mod prn;
pub mod render;
pub mod shapes;
pub mod train;

pub use error::{Error, Result};
