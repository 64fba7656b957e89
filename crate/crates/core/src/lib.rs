//! Task-specific supervised learning of surrogate models.
//!
//! A surrogate trained by plain MSE can be accurate on average yet poor
//! exactly where a downstream algorithm (a rollout, a controller, a path
//! search) actually queries it. This crate reweights the training loss toward
//! the region the algorithm visits and alternates between running the
//! algorithm and retraining.

pub mod cli;
pub mod datagen;
pub mod error;
pub mod experiment;
pub mod kernels;
pub mod models;
pub mod optim;
pub mod points;
pub mod rng;
pub mod tasks;
pub mod trainer;
pub mod weighting;

pub use error::{Error, Result};
pub use points::Points;
