//! Panel benchmarking toolkit: file formats, run manifests and the
//! `peerbench` command line on top of `peerbench-core`.

pub mod cli;
pub mod config;
pub mod error;
pub mod formats;
pub mod manifest;
pub mod panel_io;
pub mod stages;

pub use error::{CliError, ErrorKind, Result};
