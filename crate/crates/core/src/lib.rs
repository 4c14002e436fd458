//! Saliency prediction toolkit: reference metrics, differentiable training
//! losses, a small convolutional toolkit, piecewise encoder/decoder training
//! and dataset I/O.

pub mod checkpoint;
pub mod dataio;
pub mod error;
pub mod grid;
pub mod losses;
pub mod metrics;
pub mod micronet;
pub mod model;
pub mod pipeline;
pub mod transport;

pub use error::{Error, Result};
pub use grid::{DensityMap, FixationMap};
