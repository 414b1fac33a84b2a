//! File formats, configuration and commands around `transboost-core`.
//!
//! - [`checkpoint`]: JSON parameter checkpoints that round-trip bit-exactly.
//! - [`dataset`]: dataset sources, including CSV ingestion.
//! - [`config`]: the JSON run configuration.
//! - [`output`]: atomic file writes, progress logs and result CSVs.
//! - [`commands`]: `pretrain`, `transboost`, `entmin`, `sweep` and `ablate`.

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod dataset;
pub mod output;

pub use transboost_core as core;
