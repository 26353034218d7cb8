//! Multiscale shadow removal toolkit.
//!
//! * [`model`]: soft/hard attention U-Net with multiscale blocks and its
//!   ablation variants, on top of a small reverse-mode engine in [`nn`].
//! * [`training`]: L1 objective, paired augmentation, Adam, checkpointed
//!   training loop and finite-difference gradient verification.
//! * [`metrics`]: region-aware PSNR (RGB) and RMSE (CIELAB).
//! * [`synth`]: procedural scenes rendered with and without cast shadows.
//! * [`complexity`]: entropy, delentropy, intrinsic dimensionality, Haar
//!   energy and shadow statistics of a corpus.
//! * [`corpus`]: on-disk triplet layout and external dataset adapters.

pub mod complexity;
pub mod corpus;
pub mod error;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod sample;
pub mod seed;
pub mod synth;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
pub use sample::{ShadowMask, ShadowTriplet};
pub use tensor::{FeatureVolume, Tensor};
