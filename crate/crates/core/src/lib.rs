//! Identification of self-scheduled LPV state-space surrogate models with
//! Bayesian uncertainty quantification.
//!
//! The pipeline:
//!
//! 1. [`benchmark`] generates nonlinear mass-spring-damper data,
//! 2. [`estimate`] fits an LTI prior model and then the LPV model by MAP
//!    estimation (multi-start ADAM followed by L-BFGS),
//! 3. [`uq`] builds a Laplace approximation of the parameter posterior using
//!    forward [`sensitivity`] Jacobians and a Woodbury covariance recursion,
//!    then propagates it to per-sample predictive confidence bounds.
//!
//! [`workflow`] chains these steps over files; the `lpv-uq` binary is a thin
//! command-line wrapper around it.

pub mod benchmark;
pub mod data;
pub mod error;
pub mod estimate;
pub mod fixtures;
pub mod model;
pub mod sensitivity;
pub mod series;
pub mod uq;
pub mod workflow;

pub use error::{Error, Result};
pub use series::Series;
