//! Batch-evaluation front end for `reid-core`.
//!
//! - [`config`]: pipeline configuration file.
//! - [`io`]: binary embedding files with CSV metadata sidecars.
//! - [`pipeline`]: distance, query expansion, re-ranking, metrics, artifacts.
//! - [`synth`]: synthetic identity-clustered data.
//! - [`tools`]: schedule dump and augmentation demo.

pub mod config;
pub mod error;
pub mod format;
pub mod io;
pub mod pipeline;
pub mod synth;
pub mod tools;

pub use config::PipelineConfig;
pub use error::{CliError, Result};
