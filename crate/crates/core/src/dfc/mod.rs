//! Disturbance-feedback policies, their unrolled state coefficients and the
//! surrogate cost they induce.

pub mod policy;
pub mod surrogate;

pub use policy::{DfcPolicy, PolicyClassSpec, PolicyDoc};
pub use surrogate::{
    gaussian_expected_cost, policy_covariance, surrogate_cost, Expectation, PolicyCovariance, SurrogateCost,
    SurrogateModel, SurrogateValue,
};
