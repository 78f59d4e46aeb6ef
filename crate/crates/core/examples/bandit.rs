//! Control from bandit feedback: a two-point zeroth-order optimizer picks
//! policies, each held for 2H + 1 steps, and sees one scalar cost per query.
//! The repeat count comes from the robust averaging rule.
//!
//!     cargo run --release --example bandit -- [horizon] [seed] [delta] [eta0]

use std::sync::Arc;

use lds_explore::control::{
    comparator, compute_regret, policy_value, BanditConfig, BanditController, PlayedPolicy, ProblemInfo,
    RobustOracleParams, TwoPointOptimizer,
};
use lds_explore::dfc::{DfcPolicy, Expectation, PolicyClassSpec};
use lds_explore::estimation::SystemEstimate;
use lds_explore::geometry::NormBudget;
use lds_explore::lds::{rollout, Controller, ConvexCost, CostFamily, DisturbanceSource, LinearSystem, RolloutOptions, SeparableCost};
use nalgebra::{DMatrix, DVector};

fn main() -> lds_explore::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let horizon: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(1 << 16);
    let seed: u64 = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(0);
    let delta: f64 = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(0.1);
    let eta0: f64 = args.get(4).and_then(|s| s.parse().ok()).unwrap_or(0.02);

    let sys = LinearSystem::random(2, 2, 0.6, 1.0, 11)?;
    let cost: Arc<dyn ConvexCost> = Arc::new(SeparableCost::uniform(CostFamily::Huber { delta: 1.0 }, 2, 2)?);
    let cfg = BanditConfig::default();
    let spec = PolicyClassSpec::new(cfg.h, cfg.g, 2, 2)?;

    let oracle = RobustOracleParams { sigma_zeta: 1.0, sigma_xi: 0.0, c: 1.0, gamma_acc: 0.5, n: horizon };
    println!("robust averaging: sigma {:.3}, {} repeats per query", oracle.sigma(), oracle.repeats());
    let set = NormBudget::new(spec.block_shapes(), spec.g)?;
    let optimizer = TwoPointOptimizer::new(set, DVector::zeros(spec.dim()), delta, eta0, oracle.repeats(), seed)?;

    let init = SystemEstimate::new(sys.a() + DMatrix::from_element(2, 2, 0.05), sys.b().clone());
    let mut ctrl = BanditController::new(cfg.clone(), ProblemInfo::of(&sys), Box::new(optimizer), init, horizon)?;
    let noise = DisturbanceSource::gaussian(2, seed);
    let traj = rollout(&sys, &mut ctrl, &noise, horizon, &DVector::zeros(2), cost.as_ref(), &RolloutOptions::default())?;
    println!("{} queries, {} reports, {} policy switches", ctrl.queries(), ctrl.reports().len(), ctrl.switches());

    let j_star = comparator(sys.a(), sys.b(), cost.clone(), &spec, Expectation::Quadrature)?;
    let zero = policy_value(&PlayedPolicy::Dfc(DfcPolicy::zeros(cfg.h, 2, 2)), &sys, &cost, Expectation::Quadrature)?;
    let ledger = compute_regret(&traj, &ctrl.policy_log(), &sys, &cost, &j_star, Expectation::Quadrature)?;
    if let Some(last) = ctrl.policy_log().last() {
        let value = policy_value(&last.policy, &sys, &cost, Expectation::Quadrature)?;
        println!("J* = {:.4}, zero policy {:.4}, last queried policy {:.4}", j_star.value, zero, value);
    }
    println!("R_T = {:.1}, R_T^avg = {:.1}", ledger.total_regret(), ledger.total_avg_regret());
    Ok(())
}
