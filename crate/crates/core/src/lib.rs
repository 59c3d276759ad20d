//! Kernel-distance-based covariate balancing.

pub mod balancing;
pub mod cli;
pub mod baselines;
pub mod diagnostics;
pub mod error;
pub mod io;
pub mod kernel;
pub mod model;
pub mod qp;
pub mod simlab;

pub use error::{KdbError, Result};
