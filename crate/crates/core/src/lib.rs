//! Radar range-profile super-resolution.
//!
//! Echo simulation, classical estimators, the DSSR-Net unrolled network,
//! training and Monte Carlo evaluation.

pub mod baselines;
pub mod checkpoint;
pub mod dataset;
pub mod diagnostics;
pub mod error;
pub mod eval;
pub mod network;
pub mod seed;
pub mod signal;
pub mod training;

pub use error::{Error, Result};
