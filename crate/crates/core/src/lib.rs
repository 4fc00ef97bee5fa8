//! Visual note onset detection with a multi-stream 3D convolutional network.
//!
//! The crate is organized bottom-up:
//!
//! - [`tensor`] and [`nn`]: a dense tensor type and the differentiable
//!   operations the network needs, each with an explicit backward pass and a
//!   finite-difference checker.
//! - [`model`]: the multi-stream network (one convolutional stream per region
//!   of interest, no temporal pooling) and its checkpoint format.
//! - [`dataset`]: annotation ingestion, window labeling, balanced mini-batch
//!   sampling, leave-one-subject-out splits and a synthetic data generator.
//! - [`training`]: RMSprop, the training step and the epoch loop with
//!   best-validation checkpoint selection.
//! - [`evaluation`]: onset decoding, tolerance matching, F-scores, the
//!   informed random baseline and report rendering.
//! - [`config`]: the flat `key = value` run configuration shared by the CLI.
//!
//! Data-parallel inner loops go through [`parallel`], which uses rayon when
//! the `parallel` feature is enabled and falls back to plain iteration
//! otherwise. Results are bitwise identical either way.

// Validation uses `!(x > 0.0)` on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod dataset;
pub mod error;
pub mod evaluation;
pub mod model;
pub mod nn;
pub mod parallel;
pub mod rng;
pub mod tensor;
pub mod training;

pub use error::{CheckpointError, Error, Result};
pub use tensor::{Scalar, Tensor};
