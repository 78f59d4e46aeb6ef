//! System identification by ridge regression, disturbance estimates and the
//! random-control warmup.

pub mod online;
pub mod ridge;
pub mod warmup;

pub use online::OnlineIdentifier;
pub use ridge::{estimate_disturbance, lambda_schedule, RidgeState, SystemEstimate};
pub use warmup::{warmup_explore, warmup_regularizer, GaussianExploration};
