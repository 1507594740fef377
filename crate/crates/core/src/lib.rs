//! Self-supervised restoration of hyperspectral cubes with separable
//! convolutional networks.
//!
//! The crate is organised bottom-up:
//!
//! - [`cube`]: the `HSC1` cube format, normalisation, patching and
//!   rotate/flip augmentation.
//! - [`nn`]: NHWC tensors, depth-wise / point-wise / batch-norm / ReLU layers
//!   with hand-written backward passes, and the separable network itself.
//! - [`optim`]: Adam with bias correction and a step-halving schedule.
//! - [`rng`] and [`degrade`]: seeded, replayable degradations and a
//!   synthetic low-rank cube generator.
//! - [`noise`]: blind Gaussian noise level estimation.
//! - [`metrics`]: band-averaged PSNR, mode-unfolding singular spectra and
//!   directional difference histograms.
//! - [`pipelines`]: the three training procedures (noisier-target Gaussian
//!   denoising, two-network mixed anomaly removal, masked hole-filling) and
//!   patch-blended inference.
//! - [`cli`]: JSON run configs, manifests and the subcommand driver behind
//!   the `hsi-restore` binary.

pub mod cli;
pub mod cube;
pub mod degrade;
pub mod error;
pub mod metrics;
pub mod nn;
pub mod noise;
pub mod optim;
pub mod pipelines;
pub mod rng;

pub use cube::{AugmentOp, HsiCube, Patch};
pub use error::{Error, Result};
