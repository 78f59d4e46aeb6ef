//! Geometric exploration on a random stable 2×2 system with a Huber cost:
//! epoch log, final estimate and regret against the best DFC policy.
//!
//!     cargo run --release --example geometric_control -- [horizon] [seed]

use std::sync::Arc;

use lds_explore::control::{
    comparator, compute_regret, GeometricConfig, GeometricController, Initialization, ProblemInfo,
};
use lds_explore::dfc::{Expectation, PolicyClassSpec};
use lds_explore::estimation::SystemEstimate;
use lds_explore::lds::{rollout, Controller, ConvexCost, CostFamily, DisturbanceSource, LinearSystem, RolloutOptions, SeparableCost};
use nalgebra::{DMatrix, DVector};

fn main() -> lds_explore::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let horizon: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(1 << 15);
    let seed: u64 = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(0);

    let sys = LinearSystem::random(2, 2, 0.6, 1.0, 11)?;
    let cost: Arc<dyn ConvexCost> = Arc::new(SeparableCost::uniform(CostFamily::Huber { delta: 1.0 }, 2, 2)?);
    let cfg = GeometricConfig::default();
    let info = ProblemInfo::of(&sys);
    println!("system: kappa {:.3}, gamma {:.3}, beta {:.3}", info.kappa, info.gamma, info.beta);

    // A coarse initial estimate, as if from a short warmup.
    let init = SystemEstimate::new(sys.a() + DMatrix::from_element(2, 2, 0.05), sys.b() - DMatrix::from_element(2, 2, 0.05));
    let mut ctrl = GeometricController::new(cfg.clone(), info, cost.clone(), Initialization::given(&init), seed)?;
    let noise = DisturbanceSource::gaussian(2, seed);
    let traj = rollout(&sys, &mut ctrl, &noise, horizon, &DVector::zeros(2), cost.as_ref(), &RolloutOptions::default())?;

    println!("\nepoch  eps       start    T_r   spanner log|det|  region min  threshold");
    for e in ctrl.epochs() {
        let fmt = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{v:.4}"));
        println!(
            "{:>5}  {:<8.5}  {:>6}  {:>5}  {:>16.3}  {:>10}  {:>9}",
            e.epoch,
            e.epsilon,
            e.start,
            e.t_r,
            e.spanner_log_abs_det,
            fmt(e.region_min),
            fmt(e.threshold)
        );
    }
    let est = ctrl.identifier().estimate();
    println!("\nestimation error ‖Â−A‖ = {:.4}, ‖B̂−B‖ = {:.4}", (&est.a_hat - sys.a()).norm(), (&est.b_hat - sys.b()).norm());

    let spec = PolicyClassSpec::new(cfg.h, cfg.g, 2, 2)?;
    let j_star = comparator(sys.a(), sys.b(), cost.clone(), &spec, Expectation::Quadrature)?;
    let ledger = compute_regret(&traj, &ctrl.policy_log(), &sys, &cost, &j_star, Expectation::Quadrature)?;
    println!("J* = {:.4}", j_star.value);
    for k in (10..).take_while(|k| 1usize << k <= horizon) {
        let t = 1usize << k;
        println!("T = {t:>6}: R_T = {:>9.2}  R_T^avg = {:>9.2}", ledger.regret_at(t), ledger.avg_regret_at(t));
    }
    Ok(())
}
