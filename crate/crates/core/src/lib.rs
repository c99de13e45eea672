//! Bayesian structure learning for Gaussian-process time-series models.
//!
//! Covariance kernels are symbolic expressions drawn from a probabilistic
//! grammar. A population of weighted hypotheses is propagated through
//! sequential Monte Carlo over growing prefixes of the data, with involutive
//! MCMC rejuvenation over structure, parameters, and noise.

pub mod baseline;
pub mod data;
pub mod error;
pub mod gp;
pub mod forecast;
pub mod kernel;
pub mod metrics;
pub mod moves;
pub mod prior;
pub mod smc;
pub mod synthetic;

pub use error::{Error, Result};
pub use gp::{ModelState, Observations};
pub use kernel::{BaseKind, KernelExpr, Operator, Side, TreePath};
pub use prior::PcfgConfig;
