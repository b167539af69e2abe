//! File formats, reports, plots and the command-line front end for
//! `rearrange-core`.

pub mod checkpoint;
pub mod cli;
pub mod dataset;
pub mod error;
pub mod fsutil;
pub mod infer;
pub mod manifest;
pub mod report;
pub mod svg;

pub use error::{CliError, CliResult};
