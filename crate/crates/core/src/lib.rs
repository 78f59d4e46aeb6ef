//! Online control of an unknown linear dynamical system with general convex
//! costs by geometric exploration: disturbance-feedback policies, surrogate
//! costs, barycentric spanners over shrinking policy regions, ridge system
//! identification, baselines, and an experiment harness.

pub mod control;
pub mod dfc;
pub mod error;
pub mod estimation;
pub mod geometry;
pub mod harness;
pub mod lds;
pub mod linalg;
pub mod rng;

pub use error::{Error, Result};
