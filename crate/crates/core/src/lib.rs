//! Nested hybrid filtering: joint parameter estimation and state tracking
//! for nonlinear stochastic dynamical systems.
//!
//! An outer layer of parameter particles, driven by Monte Carlo or
//! quasi-Monte Carlo sampling, carries one inner state filter (EKF, EnKF or
//! bootstrap particle filter) per particle. The inner filters supply the
//! likelihood estimates that weight the outer particles.

pub mod error;
pub mod harness;
pub mod inner;
pub mod model;
pub mod oracle;
pub mod outer;
pub mod qmc;
pub mod rng;
pub mod stats;

pub use error::{NhfError, Result};
