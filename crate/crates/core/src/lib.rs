//! Perpetual integral functionals `∫_0^∞ f(X(t)) dt` of transient processes
//! in `R^d`: Brownian motion, fractional Brownian motion and compound Poisson
//! processes.
//!
//! The crate computes the potentials (expectations) and variances of these
//! functionals analytically, simulates them by Monte Carlo, and cross-checks
//! the two.

pub mod cpp;
pub mod error;
pub mod funcs;
pub mod functional;
pub mod kernels;
pub mod lattice;
pub mod mc;
pub mod paths;
pub mod quad;
pub mod rng;
pub mod special;
pub mod stats;

pub use error::{Error, Result};
