//! Filesystem formats, dataset IO and the command-line front end for
//! `migan-core`.

pub mod archive;
pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod dataset;
pub mod error;
pub mod logs;
pub mod vgg;

pub use error::{Error, Result};
