//! The no-dynamics case `x_{t+1} = B u_t + w_t`: phased elimination over
//! constant controls against explore-then-commit.
//!
//!     cargo run --release --example warmup_case -- [horizon] [seeds]

use std::sync::Arc;

use lds_explore::control::{
    control_comparator, control_regret, ControlEtcConfig, ControlEtcController, WarmupCaseConfig, WarmupCaseController,
};
use lds_explore::dfc::Expectation;
use lds_explore::lds::{
    rollout, Controller, ConvexCost, CostFamily, DisturbanceSource, LinearSystem, RolloutOptions, SeparableCost,
};
use lds_explore::linalg::mean_stderr;
use nalgebra::{DMatrix, DVector};

fn main() -> lds_explore::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let horizon: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(1 << 14);
    let seeds: u64 = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(10);

    let b = DMatrix::from_row_slice(2, 2, &[0.8, 0.3, -0.2, 0.6]);
    let sys = LinearSystem::new(DMatrix::zeros(2, 2), b, 1.0, 0.5, 1.0)?;
    // Drive the state toward (1, -0.5); controls are free.
    let cost: Arc<dyn ConvexCost> = Arc::new(SeparableCost::new(
        CostFamily::Huber { delta: 1.0 },
        2,
        2,
        vec![1.0, 1.0, 0.0, 0.0],
        vec![1.0, -0.5, 0.0, 0.0],
    )?);
    let cfg = WarmupCaseConfig::default();
    let j_star = control_comparator(sys.b(), cost.clone(), cfg.u_bound, Expectation::Quadrature)?;
    println!("J* = {:.4} at u* = {:?}", j_star.value, j_star.policy.flatten().as_slice());

    let (mut ours, mut theirs) = (Vec::new(), Vec::new());
    for seed in 0..seeds {
        let noise = DisturbanceSource::gaussian(2, seed);
        let run = |ctrl: &mut dyn Controller| -> lds_explore::Result<f64> {
            let traj = rollout(&sys, ctrl, &noise, horizon, &DVector::zeros(2), cost.as_ref(), &RolloutOptions::default())?;
            Ok(control_regret(&traj, sys.b(), &cost, &j_star, Expectation::Quadrature)?.total_regret())
        };
        let mut elim = WarmupCaseController::new(cfg.clone(), 2, 2, sys.beta(), cost.clone(), seed)?;
        ours.push(run(&mut elim)?);
        if seed == 0 {
            for e in elim.epochs() {
                println!("  epoch {:>2}: eps {:.4}, starts at {:>6}, threshold {:?}", e.epoch, e.epsilon, e.start, e.threshold);
            }
        }
        let mut etc = ControlEtcController::new(ControlEtcConfig::default(), 2, 2, cost.clone(), horizon, seed)?;
        theirs.push(run(&mut etc)?);
    }
    let wins = ours.iter().zip(&theirs).filter(|(a, b)| a < b).count();
    let (m1, s1) = mean_stderr(&ours);
    let (m2, s2) = mean_stderr(&theirs);
    println!("T = {horizon}: elimination R_T {m1:.1} ± {s1:.1}, explore-then-commit {m2:.1} ± {s2:.1}");
    println!("elimination wins {wins}/{seeds} seeds");
    Ok(())
}
