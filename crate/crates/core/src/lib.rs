//! Token-level hallucination detection from patch-level attention and
//! hidden-state traces of a vision-language model.
//!
//! The pipeline reads trace bundles ([`trace`]), turns every recorded layer
//! into an attention dispersion score ([`ads`]) and a cross-modal grounding
//! score ([`cgc`]), concatenates them into feature vectors ([`features`]),
//! and trains and evaluates binary detectors ([`classifiers`], [`eval`]).
//! [`synth`] produces labelled synthetic bundles for benchmarking.

// `!(x > 0.0)` is used on purpose so NaN falls into the rejecting branch.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod ads;
pub mod cgc;
pub mod classifiers;
pub mod config;
pub mod error;
pub mod eval;
pub mod features;
pub mod grid;
pub mod rng;
pub mod synth;
pub mod trace;

pub use config::{LayerSelection, RunConfig};
pub use error::{Error, ErrorKind, Result};
pub use trace::{Label, LayerSlice, PatchGrid, TokenTrace};
