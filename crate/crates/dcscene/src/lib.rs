//! File formats, pipeline runner and command line for `dcscene-core`.
//!
//! - [`dcse`]: binary embedding tables.
//! - [`jsonl`]: caption index, loss log, quality points and updates.
//! - [`manifest_file`]: stage manifests read by training loops.
//! - [`config`]: TOML/JSON pipeline configuration.
//! - [`pipeline`]: end-to-end runs over files or synthetic data.
//! - [`cli`]: the `dc-scene` subcommands.

pub mod cli;
pub mod config;
pub mod dcse;
pub mod error;
pub mod jsonl;
pub mod manifest_file;
pub mod pipeline;

pub use config::PipelineConfig;
pub use error::{exit, Error, Result};
