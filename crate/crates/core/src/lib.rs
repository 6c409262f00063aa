//! Large-time-step Monte Carlo simulation of scalar SDEs.
//!
//! Conditional stochastic collocation points of the transition law are
//! learned by a small fully-connected network; sampling a step then costs one
//! network evaluation plus an interpolation of a standard normal draw. The
//! compression-decompression variant evaluates the network only at marginal
//! collocation points and recovers per-path conditional points by
//! interpolation.
//!
//! Classical Euler-Maruyama and Milstein schemes, exact samplers for GBM and
//! Ornstein-Uhlenbeck, convergence and Kolmogorov-Smirnov studies, and Asian
//! and Bermudan option pricing are included as baselines and applications.

pub mod cdc;
pub mod dataset;
pub mod error;
pub mod harness;
pub mod interpolation;
pub mod models;
pub mod neural;
pub mod paths;
pub mod pricing;
pub mod probability;
pub mod rng;
pub mod schemes;
pub mod scmc;
pub mod sensitivity;
pub mod seven_league;

pub use error::{Error, Result};
