//! Bidirectional clustering of high-dimensional covariates under a
//! Poisson-Dirichlet process, spike-and-slab spline regression on cluster
//! representatives, and the simulation and evaluation tools around them.

pub mod covariates;
pub mod error;
pub mod kernel;
pub mod pdp;
pub mod regression;
pub mod sim;
pub mod stage1;
pub mod summaries;

pub use covariates::{CovariateMatrix, Standardization};
pub use error::{Error, Result};
pub use kernel::RandomSource;
pub use pdp::{Partition, PdpParams};
