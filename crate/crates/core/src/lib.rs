//! Tropical-cyclone localization from gridded wind fields trained on noisy
//! track labels.
//!
//! The crate covers the whole numerical pipeline:
//!
//! - [`grid`]: geographic grid, cell indexing, coarsening and distance math.
//! - [`synth`]: Rankine-vortex scene generator with controlled label corruption,
//!   plus split datasets.
//! - [`pack`] / [`ingest`]: the binary dataset format and the text-manifest
//!   ingestion path for real gridded fields.
//! - [`tensor`]: dense tensors, the layer set with hand-written backward passes,
//!   Adam and a finite-difference gradient oracle.
//! - [`unet`] / [`checkpoint`]: the grid-classification U-Net and its file format.
//! - [`train`] / [`calibrate`]: the deterministic training loop and temperature
//!   scaling.
//! - [`eval`] / [`stats`]: localization metrics, the denoising report, the
//!   simulated rater and exact binomial statistics.

pub mod calibrate;
pub mod checkpoint;
mod crc;
pub mod error;
pub mod eval;
pub mod grid;
pub mod ingest;
pub mod pack;
pub mod stats;
pub mod synth;
pub mod tensor;
pub mod train;
pub mod unet;

pub use error::{Error, PackError, Result};
pub use grid::{CellIndex, GeoPoint, GridSpec};
pub use synth::{Dataset, NoiseModel, Sample, Split, VortexSpec, WindField};
pub use tensor::Tensor;
pub use unet::{ModelConfig, ModelState};
