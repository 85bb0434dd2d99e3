//! File formats, run configuration and the `habitmotion` command line over
//! [`habitmotion_core`].

pub mod ablate;
pub mod cli;
pub mod config;
pub mod error;
pub mod evaluate;
pub mod formats;
pub mod manifest;
pub mod pipeline;
pub mod plot;

pub use config::RunConfig;
pub use error::{AppError, Result};
