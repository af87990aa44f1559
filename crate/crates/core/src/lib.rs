//! Toolkit for studying availability poisoning of image classifiers.
//!
//! The pipeline has three stages, each with its own module:
//!
//! * [`crafting`] — produce per-sample error-minimizing perturbations
//!   (bounded in L∞) by alternating short training phases of a source model
//!   with signed-gradient descent on the perturbations, in four flavors:
//!   plain, augmentation-robust, grayscale-constrained, and both.
//! * [`exploiter`] — train classifiers on clean, poisoned, or mixed data
//!   under configurable input filters (grayscale, bit-depth reduction),
//!   mixup, or PGD adversarial training, with per-epoch metric records.
//! * [`evaluation`] — clean and adversarial (FGSM/PGD) accuracy,
//!   cross-architecture transfer matrices, and structural statistics of the
//!   crafted perturbations (channel dispersion vs. spatial energy).
//!
//! Supporting modules: [`data`] (datasets in canonical `[0,1]` NHWC pixel
//! space), [`models`] (architecture registry behind one classifier
//! contract), [`mitigations`] (image-space transforms), [`storage`]
//! (hash-verified artifact persistence), and [`rng`] (tagged deterministic
//! random streams). Everything is single-threaded and bit-reproducible for
//! a fixed seed.

pub mod crafting;
pub mod data;
pub mod error;
pub mod evaluation;
pub mod exploiter;
pub mod mitigations;
pub mod models;
pub mod rng;
pub mod storage;

pub use error::{Error, Result};
pub use ule_nn as nn;
