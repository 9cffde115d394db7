//! Files, datasets and the command-line pipeline around [`symavg_core`].
//!
//! - [`io`]: trajectory directories (`meta.json` + little-endian `frames.bin`),
//! - [`dataset`]: Gray-Scott datasets with a manifest and train/test split,
//! - [`model_file`]: stencil model serialization,
//! - [`tables`]: loss CSVs and the Markdown report,
//! - [`commands`]: generate, train, eval and report as functions,
//! - [`cli`]: the `symavg` binary's argument handling.

pub mod cli;
pub mod commands;
pub mod dataset;
mod error;
pub mod io;
pub mod model_file;
pub mod tables;

pub use error::{Error, Result};
pub use symavg_core as core;
