//! Pipeline driver behind the `yoas` binary: run configuration, stage
//! orchestration over a run directory, and report plotting.

pub mod config;
pub mod error;
pub mod pipeline;
pub mod plot;

pub use config::{Preset, RunConfig};
pub use error::{CliError, Result};
pub use pipeline::{Manifest, Outcome, Runner, Stage};
