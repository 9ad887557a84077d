//! File formats, configuration and the batch pipeline behind the `pearl`
//! command-line tool. The algorithms live in `pearl-core`.

pub mod commands;
pub mod config;
pub mod error;
pub mod io;
pub mod report;

pub use config::PipelineConfig;
pub use error::{PearlError, Result};
pub use report::MetricsReport;
