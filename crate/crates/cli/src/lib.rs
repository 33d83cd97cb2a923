//! Pipeline orchestration for `mortality-core`: declarative run
//! configuration, stage-by-stage execution with an artifact manifest,
//! resumable reruns and cross-run comparison tables.

pub mod cli;
pub mod compare;
pub mod config;
pub mod error;
pub mod run;
pub mod stages;

pub use config::RunConfig;
pub use error::{CliError, CliResult};
pub use run::{run, RunManifest, RunOptions};
