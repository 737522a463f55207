// SPDX-License-Identifier: MIT OR Apache-2.0

//! Command-line driver for resstream: run configuration, CSV and JSON
//! artifacts, SVG plots and PNG montages.

pub mod args;
pub mod commands;
pub mod config;
pub mod error;
pub mod font;
pub mod montage;
pub mod plots;
pub mod table;

pub use error::{CliError, CliResult};
