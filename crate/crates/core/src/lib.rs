//! Multiple-instance learning by jointly learned prototypes.
//!
//! A bag is embedded as its pooled (min / mean / max) Euclidean distances to
//! a set of learned prototypes; the embedding is layer-normalized per bag
//! and fed to a logistic classifier. Prototypes and classifier are trained
//! together with Adam, one bag per step, using hand-derived gradients.
//!
//! Modules, bottom-up:
//! - [`dataset`]: bags, CSV/IDX input, synthetic data, stratified folds
//! - [`features`]: distance pooling and layer normalization
//! - [`model`]: parameters, objective, gradients, checkpoints
//! - [`optim`]: Adam with separate parameter groups
//! - [`trainer`]: training loop, evaluation, cross-validation, export

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dataset;
pub mod error;
pub mod features;
pub mod model;
pub mod optim;
pub mod rng;
pub mod trainer;

pub use error::{Error, Result};
