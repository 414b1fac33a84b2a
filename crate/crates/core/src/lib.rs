//! Transductive fine-tuning of softmax classifiers.
//!
//! Given a classifier pretrained on a labeled set and the unlabeled test set
//! it will be scored on, fine-tune it on that test set with a pairwise
//! large-margin loss: pairs of test instances that the pretrained model
//! assigns to different classes are pushed apart in probability space,
//! weighted by its confidence, while cross-entropy on the labeled set keeps
//! the model anchored.
//!
//! - [`model`]: linear and one-hidden-layer softmax classifiers with exact gradients.
//! - [`transloss`]: similarity, selection and confidence functions, the exact
//!   pairwise loss, its minibatch estimator and the combined objective.
//! - [`trainer`]: pretraining, the frozen [`transloss::Snapshot`], cyclical
//!   batching, SGD with Nesterov momentum and the fine-tuning loops
//!   (transductive, entropy minimization, cross-entropy only).
//! - [`data`]: synthetic datasets and stratified transductive splits.
//! - [`eval`]: accuracy, loss-improvement metric, fraction sweeps and ablations.
//!
//! The crate is `no_std` and needs only `alloc`. File formats, logging and
//! the command-line front end live in `transboost-lab`.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

mod error;

pub mod data;
pub mod eval;
pub mod model;
pub mod rng;
pub mod trainer;
pub mod transloss;

pub use error::{Error, Result};
