//! File formats, configuration and run-directory handling for the `seminj`
//! command line. All numerics live in `seminj-core`.

pub mod checkpoint;
pub mod config;
pub mod outdir;
pub mod provenance;
pub mod tables;

pub use checkpoint::{Checkpoint, CheckpointError};
pub use config::{ConfigError, RunConfig};
