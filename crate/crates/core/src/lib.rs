//! Mutual-information based modality valuation and asymmetric reinforcement
//! for imbalanced multimodal classification.
//!
//! The crate is organised bottom-up:
//!
//! - [`tensor`]: dense 2-D tensors with a define-by-run reverse-mode tape.
//! - [`info`]: empirical joints over discrete class variables and the
//!   information measures built on them (entropy, MI, NMI, CMI, NCMI,
//!   interaction information, pointwise positive MI).
//! - [`valuation`]: per-sample marginal and joint modality contributions.
//! - [`reinforcement`]: fusion weights, the balanced min-max loss and the
//!   contribution-driven resampler.
//! - [`model`]: a small multimodal classifier with probe heads.
//! - [`data`]: synthetic datasets with controllable modality dominance, CSV I/O,
//!   stratified splits and resampled epoch orders.
//! - [`trainer`]: the warm-up + reinforcement training loop and evaluation.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod data;
pub mod error;
pub mod info;
pub mod model;
pub mod reinforcement;
pub mod tensor;
pub mod trainer;
pub mod valuation;

pub use error::{Error, Result};
