//! Explore-then-commit against geometric exploration across horizons, with
//! log-log slopes of the mean regret.
//!
//!     cargo run --release --example etc_baseline -- [seeds]

use std::sync::Arc;

use lds_explore::control::{
    comparator, compute_regret, EtcConfig, EtcController, GeometricConfig, GeometricController, Initialization,
    ProblemInfo,
};
use lds_explore::dfc::{Expectation, PolicyClassSpec};
use lds_explore::estimation::SystemEstimate;
use lds_explore::harness::{fit_slope, Metric, SlopeOptions, SummaryRow};
use lds_explore::lds::{
    rollout, Controller, ConvexCost, CostFamily, DisturbanceSource, LinearSystem, RolloutOptions, SeparableCost,
};
use nalgebra::{DMatrix, DVector};

fn main() -> lds_explore::Result<()> {
    let seeds: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(5);
    let sys = LinearSystem::random(2, 2, 0.6, 1.0, 11)?;
    let cost: Arc<dyn ConvexCost> = Arc::new(SeparableCost::uniform(CostFamily::Huber { delta: 1.0 }, 2, 2)?);
    let info = ProblemInfo::of(&sys);
    let spec = PolicyClassSpec::new(3, 1.0, 2, 2)?;
    let j_star = comparator(sys.a(), sys.b(), cost.clone(), &spec, Expectation::Quadrature)?;
    let init = SystemEstimate::new(sys.a() + DMatrix::from_element(2, 2, 0.05), sys.b().clone());

    let mut rows = Vec::new();
    for k in 12..=15 {
        let horizon = 1usize << k;
        for seed in 0..seeds {
            let noise = DisturbanceSource::gaussian(2, seed);
            let mut run = |name: &str, ctrl: &mut dyn Controller| -> lds_explore::Result<()> {
                let traj = rollout(&sys, ctrl, &noise, horizon, &DVector::zeros(2), cost.as_ref(), &RolloutOptions::default())?;
                let led = compute_regret(&traj, &ctrl.policy_log(), &sys, &cost, &j_star, Expectation::Quadrature)?;
                rows.push(SummaryRow {
                    controller: name.into(),
                    horizon,
                    seed,
                    r_t: led.total_regret(),
                    r_t_avg: led.total_avg_regret(),
                    wall_ms: 0,
                });
                Ok(())
            };
            let mut etc = EtcController::new(EtcConfig::default(), info, cost.clone(), horizon, seed)?;
            run("etc", &mut etc)?;
            let mut geo =
                GeometricController::new(GeometricConfig::default(), info, cost.clone(), Initialization::given(&init), seed)?;
            run("geometric", &mut geo)?;
        }
    }
    let opts = SlopeOptions { metric: Metric::Realized, min_seeds: seeds.min(5) as usize, ..SlopeOptions::default() };
    for name in ["etc", "geometric"] {
        let fit = fit_slope(&rows, name, &opts)?;
        let means: Vec<String> = fit.points.iter().map(|(t, m, _)| format!("T={t}: {m:.1}")).collect();
        println!("{name:<10} {}", means.join("  "));
        println!("{:<10} slope {:.3}, 95% CI [{:.3}, {:.3}]", "", fit.slope, fit.ci.0, fit.ci.1);
    }
    Ok(())
}
