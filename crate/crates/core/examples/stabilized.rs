//! An open-loop unstable plant (A = 1.2 I) controlled through a fixed
//! stabilizing gain K₀ = −0.7 I, with the geometric learner running on the
//! closed loop A + B K₀ behind the wrapper.
//!
//!     cargo run --release --example stabilized -- [horizon]

use std::sync::Arc;

use lds_explore::control::{
    effective_budget, GeometricConfig, GeometricController, Initialization, ProblemInfo, StabilizedController,
};
use lds_explore::estimation::SystemEstimate;
use lds_explore::lds::{
    rollout, Controller, ConvexCost, CostFamily, DisturbanceSource, FeedbackCost, LinearSystem, RolloutOptions,
    SeparableCost,
};
use nalgebra::{DMatrix, DVector};

fn main() -> lds_explore::Result<()> {
    let horizon: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(10_000);
    let a = DMatrix::identity(2, 2) * 1.2;
    let b = DMatrix::identity(2, 2);
    let k0 = DMatrix::identity(2, 2) * -0.7;
    // Stability parameters describe the closed loop A + B K₀ = 0.5 I.
    let (kappa, gamma, beta) = (1.0, 0.5, 1.0);
    let plant = LinearSystem::unstable(a.clone(), b.clone(), kappa, gamma, beta)?;
    let closed = LinearSystem::new(&a + &b * &k0, b.clone(), kappa, gamma, beta)?;

    let cost: Arc<dyn ConvexCost> = Arc::new(SeparableCost::uniform(CostFamily::Huber { delta: 1.0 }, 2, 2)?);
    let learner_cost: Arc<dyn ConvexCost> = Arc::new(FeedbackCost::new(cost.clone(), k0.clone())?);
    let g = effective_budget(1.0, kappa, gamma);
    let cfg = GeometricConfig { g, ..GeometricConfig::default() };
    let init = SystemEstimate::new(closed.a().clone(), closed.b().clone());
    let inner = GeometricController::new(cfg, ProblemInfo::of(&closed), learner_cost, Initialization::given(&init), 0)?;
    let mut ctrl = StabilizedController::new(k0, inner, g, 1e6);

    let noise = DisturbanceSource::gaussian(2, 0);
    let traj = rollout(&plant, &mut ctrl, &noise, horizon, &DVector::zeros(2), cost.as_ref(), &RolloutOptions::default())?;
    let max = traj.states.iter().map(|x| x.norm()).fold(0.0, f64::max);
    let mean_cost = traj.costs.iter().sum::<f64>() / horizon as f64;
    println!("effective budget G + κ³/γ = {g}");
    println!("max ‖x_t‖ over {horizon} steps: {max:.3}; mean cost {mean_cost:.4}");
    println!("epochs run by the inner learner: {}", ctrl.inner().epochs().len());
    println!("audit: {}", serde_json::to_string(&ctrl.audit()["effective_g"]).unwrap_or_default());
    Ok(())
}
