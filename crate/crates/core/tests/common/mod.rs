#![allow(dead_code)]

use std::sync::Arc;

use lds_explore::control::{
    comparator, compute_regret, control_comparator, control_regret, ComparatorValue, GeometricConfig,
    GeometricController, Initialization, ProblemInfo, RegretLedger, WarmupCaseConfig, WarmupCaseController,
};
use lds_explore::dfc::{Expectation, PolicyClassSpec};
use lds_explore::estimation::SystemEstimate;
use lds_explore::harness::{fit_slope, Metric, SlopeFit, SlopeOptions, SummaryRow};
use lds_explore::lds::{
    rollout, Controller, ConvexCost, CostFamily, DisturbanceSource, LinearSystem, RolloutOptions, SeparableCost,
    Trajectory,
};
use lds_explore::rng;
use nalgebra::{DMatrix, DVector};

/// The 2×2 benchmark: random stable `A` (spectral radius 0.6), `‖B‖ = 1`,
/// Huber cost centered at the origin.
pub fn huber_instance() -> (LinearSystem, Arc<dyn ConvexCost>) {
    let sys = LinearSystem::random(2, 2, 0.6, 1.0, 11).unwrap();
    let cost: Arc<dyn ConvexCost> = Arc::new(SeparableCost::uniform(CostFamily::Huber { delta: 1.0 }, 2, 2).unwrap());
    (sys, cost)
}

/// No dynamics, a reachable state target and a Huber state cost.
pub fn warmup_instance() -> (LinearSystem, Arc<dyn ConvexCost>) {
    let b = DMatrix::from_row_slice(2, 2, &[0.8, 0.3, -0.2, 0.6]);
    let sys = LinearSystem::new(DMatrix::zeros(2, 2), b, 1.0, 0.5, 1.0).unwrap();
    let cost: Arc<dyn ConvexCost> = Arc::new(
        SeparableCost::new(CostFamily::Huber { delta: 1.0 }, 2, 2, vec![1.0, 1.0, 0.0, 0.0], vec![1.0, -0.5, 0.0, 0.0])
            .unwrap(),
    );
    (sys, cost)
}

/// Truth plus a seeded perturbation of Frobenius norm `scale`.
pub fn perturbed(sys: &LinearSystem, seed: u64, scale: f64) -> SystemEstimate {
    let (dx, du) = (sys.dx(), sys.du());
    let mut r = rng::stream(seed, &[rng::label::PERTURBATION]);
    let mut g = DMatrix::zeros(dx, dx + du);
    rng::fill_standard_normal(&mut r, g.as_mut_slice());
    let g = &g * (scale / g.norm());
    SystemEstimate::new(sys.a() + g.columns(0, dx), sys.b() + g.columns(dx, du))
}

pub fn dfc_comparator(sys: &LinearSystem, cost: &Arc<dyn ConvexCost>, h: usize, g: f64) -> ComparatorValue {
    let spec = PolicyClassSpec::new(h, g, sys.dx(), sys.du()).unwrap();
    comparator(sys.a(), sys.b(), cost.clone(), &spec, Expectation::Quadrature).unwrap()
}

pub fn run(sys: &LinearSystem, ctrl: &mut dyn Controller, cost: &Arc<dyn ConvexCost>, horizon: usize, seed: u64) -> Trajectory {
    let noise = DisturbanceSource::gaussian(sys.dx(), seed);
    rollout(sys, ctrl, &noise, horizon, &DVector::zeros(sys.dx()), cost.as_ref(), &RolloutOptions::default()).unwrap()
}

pub fn ledger(
    sys: &LinearSystem,
    ctrl: &dyn Controller,
    traj: &Trajectory,
    cost: &Arc<dyn ConvexCost>,
    j_star: &ComparatorValue,
) -> RegretLedger {
    compute_regret(traj, &ctrl.policy_log(), sys, cost, j_star, Expectation::Quadrature).unwrap()
}

/// Geometric controller from a perturbed initial estimate (norm 0.1).
pub fn geometric(sys: &LinearSystem, cost: &Arc<dyn ConvexCost>, cfg: GeometricConfig, seed: u64) -> GeometricController {
    let init = Initialization::given(&perturbed(sys, seed, 0.1));
    GeometricController::new(cfg, ProblemInfo::of(sys), cost.clone(), init, seed).unwrap()
}

pub fn run_geometric(
    sys: &LinearSystem,
    cost: &Arc<dyn ConvexCost>,
    cfg: GeometricConfig,
    j_star: &ComparatorValue,
    horizon: usize,
    seed: u64,
) -> (GeometricController, Trajectory, RegretLedger) {
    let mut ctrl = geometric(sys, cost, cfg, seed);
    let traj = run(sys, &mut ctrl, cost, horizon, seed);
    let led = ledger(sys, &ctrl, &traj, cost, j_star);
    (ctrl, traj, led)
}

pub fn warmup_comparator(sys: &LinearSystem, cost: &Arc<dyn ConvexCost>, u_bound: f64) -> ComparatorValue {
    control_comparator(sys.b(), cost.clone(), u_bound, Expectation::Quadrature).unwrap()
}

pub fn run_warmup_case(
    sys: &LinearSystem,
    cost: &Arc<dyn ConvexCost>,
    cfg: WarmupCaseConfig,
    j_star: &ComparatorValue,
    horizon: usize,
    seed: u64,
) -> (WarmupCaseController, RegretLedger) {
    let mut ctrl = WarmupCaseController::new(cfg, sys.dx(), sys.du(), sys.beta(), cost.clone(), seed).unwrap();
    let traj = run(sys, &mut ctrl, cost, horizon, seed);
    let led = control_regret(&traj, sys.b(), cost, j_star, Expectation::Quadrature).unwrap();
    (ctrl, led)
}

pub fn row(controller: &str, horizon: usize, seed: u64, led: &RegretLedger) -> SummaryRow {
    SummaryRow {
        controller: controller.into(),
        horizon,
        seed,
        r_t: led.regret_at(horizon),
        r_t_avg: led.avg_regret_at(horizon),
        wall_ms: 0,
    }
}

pub fn slope(rows: &[SummaryRow], controller: &str, metric: Metric) -> SlopeFit {
    let opts = SlopeOptions { metric, ..SlopeOptions::default() };
    fit_slope(rows, controller, &opts).unwrap()
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn loglog_slope(points: &[(f64, f64)]) -> f64 {
    let n = points.len() as f64;
    let xs: Vec<f64> = points.iter().map(|p| p.0.ln()).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    sxy / sxx
}
