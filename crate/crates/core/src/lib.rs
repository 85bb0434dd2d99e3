#![no_std]
extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod error;
pub mod habit;
pub mod math;
pub mod metrics;
pub mod motion;
pub mod nn;
pub mod retrieval;
pub mod rng;
pub mod transfer;
pub mod vqvae;

pub use error::{Error, Result};
