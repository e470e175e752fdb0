//! Surrogate-driven representation learning for imbalanced regression.
//!
//! Regression models are trained with two geometric constraints on the
//! ordered trace of per-bin centroids on the unit hypersphere: an enveloping
//! term that spreads the trace over the sphere and a homogeneity term that
//! keeps it smooth and evenly spaced. A surrogate of per-bin centroids,
//! refilled per batch and blended across epochs, carries the constraints
//! over the whole label range.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod data;
pub mod diff;
pub mod error;
pub mod geometry;
pub mod gradsuite;
pub mod io;
pub mod manifest;
pub mod metrics;
pub mod nn;
pub mod olgen;
pub mod rng;
pub mod surrogate;
pub mod trainer;

pub use error::{Error, Result};
