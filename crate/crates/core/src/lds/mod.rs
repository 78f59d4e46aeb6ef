//! The linear dynamical system, its stability certificate, costs, disturbances
//! and closed-loop simulation.

pub mod cost;
pub mod noise;
pub mod rollout;
pub mod stability;
pub mod system;

pub use cost::{ConvexCost, CostFamily, FeedbackCost, SeparableCost};
pub use noise::{DisturbanceKind, DisturbanceSource, DisturbanceStream};
pub use rollout::{rollout, Controller, Observation, RolloutOptions, StepMarker, Trajectory};
pub use stability::{check_strong_stability, spectral_power_bound, StabilityCertificate};
pub use system::LinearSystem;
