//! Uncertainty-guided active depth sensing.
//!
//! An ensemble of sparse-conditioned depth networks predicts dense depth from
//! an RGB image plus a handful of measured depths. The ensemble's predictive
//! variance, and the gradient of its mean with respect to the sparse input,
//! drive a Stein variational particle optimizer that picks where to probe next.
//!
//! Modules, bottom up:
//! - [`scenegen`]: procedural scenes, sparse samplers, dataset container
//! - [`depthnet`]: the U-Net depth model, scale-invariant loss, training
//! - [`ensemble`]: variance, total uncertainty and its input gradient
//! - [`selection`]: the five probe-selection strategies, including SVGD
//! - [`acquisition`]: probing oracle, metrics, episodes and experiment tables

pub mod acquisition;
pub mod config;
pub mod depthnet;
pub mod ensemble;
pub mod error;
pub mod grid;
pub mod io;
pub mod nn;
pub mod scenegen;
pub mod seed;
pub mod selection;

pub use error::{Error, Result};
pub use grid::{DepthMap, FieldRole, Grid, Mask, Pixel, RgbImage, ScalarField, SparseDepthMap, SENTINEL};
