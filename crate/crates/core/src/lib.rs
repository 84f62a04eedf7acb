//! Stochastic maximum-likelihood direction-of-arrival estimation on uniform
//! and sparse linear arrays, solved by majorization-minimization with an
//! inner ADMM loop, plus coarray baselines, Cramer-Rao bounds and a Monte
//! Carlo harness.

pub mod baselines;
pub mod crb;
pub mod error;
pub mod geometry;
pub mod harness;
pub mod linalg;
pub mod mesa;
pub mod signal;
pub mod toeplitz;

pub use error::{Error, Result};
pub use geometry::ArrayGeometry;
pub use signal::{Correlation, SnapshotSet, SourceModel};
pub use toeplitz::{SourceEstimate, ToeplitzParam};
