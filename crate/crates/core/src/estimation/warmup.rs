use nalgebra::{DMatrix, DVector};

use crate::control::regret::{PlayedPolicy, PolicySegment};
use crate::error::{Error, Result};
use crate::estimation::ridge::{RidgeState, SystemEstimate};
use crate::lds::cost::ConvexCost;
use crate::lds::noise::DisturbanceSource;
use crate::lds::rollout::{rollout, Controller, Observation, RolloutOptions, Trajectory};
use crate::lds::system::LinearSystem;
use crate::rng::{self, StreamRng};

/// Plays `u_t ~ N(0, I)`.
pub struct GaussianExploration {
    du: usize,
    rng: StreamRng,
}

impl GaussianExploration {
    pub fn new(du: usize, seed: u64) -> Self {
        Self { du, rng: rng::stream(seed, &[rng::label::EXPLORATION]) }
    }
}

impl Controller for GaussianExploration {
    fn name(&self) -> &str {
        "gaussian-exploration"
    }

    fn act(&mut self, _: &Observation<'_>) -> Result<DVector<f64>> {
        let mut u = DVector::zeros(self.du);
        rng::fill_standard_normal(&mut self.rng, u.as_mut_slice());
        Ok(u)
    }

    fn policy_log(&self) -> Vec<PolicySegment> {
        vec![PolicySegment { start: 1, policy: PlayedPolicy::Exploration }]
    }
}

/// Random-control warmup: play `u_t ~ N(0, I)` for `t0` steps and return the
/// regularized least-squares estimate with `V = Σ z zᵀ + regularizer·I`.
pub fn warmup_explore(
    sys: &LinearSystem,
    cost: &dyn ConvexCost,
    noise: &DisturbanceSource,
    t0: usize,
    regularizer: f64,
    seed: u64,
    x1: &DVector<f64>,
) -> Result<(SystemEstimate, Trajectory)> {
    if t0 < 1 {
        return Err(Error::InvalidArgument("warmup length must be at least 1".into()));
    }
    let mut ctrl = GaussianExploration::new(sys.du(), seed);
    let traj = rollout(sys, &mut ctrl, noise, t0, x1, cost, &RolloutOptions::default())?;
    let mut ridge = RidgeState::new(
        regularizer,
        &SystemEstimate::new(DMatrix::zeros(sys.dx(), sys.dx()), DMatrix::zeros(sys.dx(), sys.du())),
    )?;
    for t in 0..t0 {
        ridge.update(&traj.states[t], &traj.controls[t], &traj.states[t + 1])?;
    }
    Ok((ridge.solve_exact()?, traj))
}

/// `(κ² + β)⁻²`, the warmup regularizer.
pub fn warmup_regularizer(kappa: f64, beta: f64) -> f64 {
    (kappa * kappa + beta).powi(-2)
}
