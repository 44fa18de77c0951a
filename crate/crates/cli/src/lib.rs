//! Command-line surface for the `har-core` engine: dataset statistics,
//! training, evaluation, single-window prediction, plot-data export and a
//! gradient-check harness.
//!
//! Every command writes its human-readable report to the supplied writer and
//! its machine-readable twins (CSV or `key=value` files) to disk.

pub mod args;
pub mod commands;
mod error;

pub use error::CliError;
