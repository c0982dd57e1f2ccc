//! File formats, parallel execution and the command-line front end for the
//! `ravel_core` benchmark algorithms.

pub mod cli;
pub mod codec;
pub mod config;
mod error;
pub mod manifest;
pub mod model_io;
pub mod report;
pub mod runner;
pub mod tables;

pub use error::{Error, Result};
