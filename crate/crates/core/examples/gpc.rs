//! Gradient perturbation control with known B: online gradient descent on
//! DFC policies, with the simulation residual logged every step.
//!
//!     cargo run --release --example gpc -- [horizon] [eta]

use std::sync::Arc;

use lds_explore::control::{comparator, compute_regret, GpcConfig, GpcController, ProblemInfo};
use lds_explore::dfc::{Expectation, PolicyClassSpec};
use lds_explore::lds::{rollout, Controller, ConvexCost, CostFamily, DisturbanceSource, LinearSystem, RolloutOptions, SeparableCost};
use nalgebra::{DMatrix, DVector};

fn main() -> lds_explore::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let horizon: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(1 << 15);
    let eta: f64 = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(0.1);

    let sys = LinearSystem::random(2, 2, 0.6, 1.0, 11)?;
    let cost: Arc<dyn ConvexCost> =
        Arc::new(SeparableCost::uniform(CostFamily::QuadraticClipped { radius: 5.0 }, 2, 2)?);
    let cfg = GpcConfig { eta, ..GpcConfig::default() };
    let mut ctrl = GpcController::new(cfg.clone(), ProblemInfo::of(&sys), sys.b().clone(), DMatrix::zeros(2, 2), cost.clone())?;
    let noise = DisturbanceSource::gaussian(2, 0);
    let traj = rollout(&sys, &mut ctrl, &noise, horizon, &DVector::zeros(2), cost.as_ref(), &RolloutOptions::default())?;

    let checks = ctrl.simulation_checks();
    let lx = cost.lipschitz();
    // Excess of the residual over L‖(Â + BK)^{H+1}‖‖x_{t-H-1}‖; at most rounding error.
    let worst = checks
        .iter()
        .map(|c| c.residual - lx * c.closed_loop_power * c.anchor_norm)
        .fold(f64::NEG_INFINITY, f64::max);
    println!("{} simulation checks, worst excess over the bound = {worst:.2e}", checks.len());
    println!("‖Â − A‖ = {:.2e}", (ctrl.a_hat() - sys.a()).norm());

    let spec = PolicyClassSpec::new(cfg.h, cfg.g, 2, 2)?;
    let j_star = comparator(sys.a(), sys.b(), cost.clone(), &spec, Expectation::Quadrature)?;
    let ledger = compute_regret(&traj, &ctrl.policy_log(), &sys, &cost, &j_star, Expectation::Quadrature)?;
    for k in (10..).take_while(|k| 1usize << k <= horizon) {
        let t = 1usize << k;
        println!("T = {t:>6}: R_T = {:>8.2}  R_T^avg = {:>8.2}", ledger.regret_at(t), ledger.avg_regret_at(t));
    }
    println!("final ‖M‖ blocks: {:?}", (0..cfg.h).map(|i| ctrl.policy().block(i).norm()).collect::<Vec<_>>());
    Ok(())
}
