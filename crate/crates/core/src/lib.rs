//! Convolutional selective autoencoder for rare-object detection.
//!
//! The network is trained to reconstruct only the target objects in 16x16
//! patches and to output (near) zero everywhere else. At detection time a
//! frame is cut into overlapping patches, each patch is reconstructed, low
//! dynamic-range outputs are suppressed, and the survivors are stitched into a
//! frame-sized activation map that is thresholded into bounding boxes.
//!
//! Module map:
//!
//! * [`tensor`], [`rng`]: numeric and random-number plumbing.
//! * [`layers`], [`model`]: layer kernels and the Model 1 / Model 2 stacks.
//! * [`train`], [`checkpoint`]: optimization and persistence.
//! * [`patch`], [`frame`], [`annotations`]: frames, patch grids and labels.
//! * [`postprocess`], [`detect`]: stitching and box extraction.
//! * [`metrics`]: ADA / AMER / AND evaluation.
//! * [`synth`]: seeded synthetic microscopy data.

pub mod annotations;
pub mod checkpoint;
pub mod detect;
pub mod error;
pub mod frame;
pub mod gradcheck;
pub mod layers;
pub mod metrics;
pub mod model;
pub mod patch;
pub mod postprocess;
pub mod rng;
pub mod synth;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use model::{build_model, Arch, ModelParams};
pub use tensor::Tensor;
