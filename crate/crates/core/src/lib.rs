//! Optimal-transport reduced-order modeling.
//!
//! Snapshots of parametrized PDEs are turned into probability measures,
//! compared with entropic optimal transport, compressed with a
//! Wasserstein-kernel POD, and reconstructed by autoencoders trained with
//! MSE or Sinkhorn losses.

pub mod error;
pub mod io;
pub mod kpod;
pub mod linalg;
pub mod measures;
pub mod nn;
pub mod parallel;
pub mod pde;
pub mod rom;
pub mod sinkhorn;

pub use error::{Error, Result};
