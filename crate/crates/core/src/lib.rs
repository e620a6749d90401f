//! Compressed sensor caching in cache networks.
//!
//! Caches store a few random sensor samples of a spatio-temporally
//! correlated field and recover the whole field jointly: each cache solves
//! its own basis-pursuit problem while consensus ADMM aligns the
//! reconstructed observations at a small set of shared anchor sensors.

pub mod basis;
pub mod caching;
pub mod error;
pub mod field;
pub mod harness;
pub mod netsim;
pub mod rng;
pub mod solver;

pub use error::{Error, Result};
