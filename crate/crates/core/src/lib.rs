//! Empirical saddle point estimators for stochastic saddle-point problems.
//!
//! The crate builds sample-average (and regularized) saddle-point problems,
//! solves them with a mirror-prox solver carrying a certified duality gap, and
//! measures how well the empirical solutions generalize to the population
//! problem. Problem families: strongly convex-strongly concave quadratics,
//! stochastic matrix games and average-reward MDPs in their Bellman saddle
//! form.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod games;
pub mod geometry;
pub mod linalg;
pub mod mdp;
pub mod metrics;
pub mod problems;
pub mod rates;
pub mod rng;
pub mod runner;
pub mod solver;
pub mod stability;

pub use error::{Error, Result};
