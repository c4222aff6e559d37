//! Host-side tooling around `plm-core`: weight files, config loading, layer
//! streaming, the latency benchmark, reports and the command-line interface.

pub mod bench;
pub mod cli;
pub mod config_io;
mod error;
pub mod offload;
pub mod report;
pub mod weights;

pub use error::{LabError, Result};
