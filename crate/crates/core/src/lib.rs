//! Deterministic generator and scorer for a 32-DGP causal inference benchmark.

pub mod covariates;
pub mod csvio;
pub mod dgp;
pub mod engine;
pub mod error;
pub mod evaluation;
pub mod nonadditive;
pub mod normal;
pub mod rng;
pub mod synth;
pub mod verify;

pub use error::{Error, ErrorClass, Result};
