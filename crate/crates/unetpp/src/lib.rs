//! File formats, experiment commands and the command-line front end for the
//! UNet++ family lab. The numerical core lives in [`unetpp_core`].

pub mod cli;
pub mod codec;
pub mod commands;
pub mod config;
mod error;
pub mod fsutil;
pub mod pgm;
pub mod report;

pub use error::{Error, Result};
pub use unetpp_core as core;
