//! Closed-loop simulation. Controllers see states and past costs only.

use std::time::{Duration, Instant};

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::control::regret::PolicySegment;
use crate::error::{ensure_dim, Error, Result};
use crate::lds::cost::ConvexCost;
use crate::lds::noise::DisturbanceSource;
use crate::lds::system::LinearSystem;
use crate::linalg::vec_all_finite;

/// What a controller observes at time `t` (1-based).
#[derive(Debug, Clone, Copy)]
pub struct Observation<'a> {
    pub t: usize,
    pub state: &'a DVector<f64>,
    /// `c(x_{t-1}, u_{t-1})`, absent at `t = 1`.
    pub last_cost: Option<f64>,
}

/// Bookkeeping attached to each step by the controller that produced it.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepMarker {
    pub epoch: usize,
    /// The policy used at this step differs from the previous step's.
    pub policy_switch: bool,
}

pub trait Controller {
    fn name(&self) -> &str;

    /// Produce `u_t` from the observation. Must not depend on `w_t`.
    fn act(&mut self, obs: &Observation<'_>) -> Result<DVector<f64>>;

    /// Marker for the step most recently produced by `act`.
    fn marker(&self) -> StepMarker {
        StepMarker::default()
    }

    /// Policies played so far, as contiguous segments.
    fn policy_log(&self) -> Vec<PolicySegment> {
        Vec::new()
    }

    /// Free-form audit trail (epochs, spanners, thresholds, warnings).
    fn audit(&self) -> serde_json::Value {
        serde_json::Value::Null
    }

    /// Disturbance estimates `ŵ_1, ŵ_2, …` recorded so far, if the controller
    /// keeps them.
    fn disturbance_estimates(&self) -> Option<&[DVector<f64>]> {
        None
    }
}

impl<C: Controller + ?Sized> Controller for Box<C> {
    fn name(&self) -> &str {
        (**self).name()
    }

    fn act(&mut self, obs: &Observation<'_>) -> Result<DVector<f64>> {
        (**self).act(obs)
    }

    fn marker(&self) -> StepMarker {
        (**self).marker()
    }

    fn policy_log(&self) -> Vec<PolicySegment> {
        (**self).policy_log()
    }

    fn audit(&self) -> serde_json::Value {
        (**self).audit()
    }

    fn disturbance_estimates(&self) -> Option<&[DVector<f64>]> {
        (**self).disturbance_estimates()
    }
}

#[derive(Debug, Clone)]
pub struct RolloutOptions {
    /// Abort once `‖x_t‖` exceeds this.
    pub blowup: f64,
    /// Wall-clock budget for the whole rollout.
    pub budget: Option<Duration>,
}

impl Default for RolloutOptions {
    fn default() -> Self {
        Self { blowup: 1e8, budget: None }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Trajectory {
    /// `x_1 .. x_{T+1}`.
    pub states: Vec<DVector<f64>>,
    pub controls: Vec<DVector<f64>>,
    pub disturbances: Vec<DVector<f64>>,
    /// `c(x_t, u_t)`.
    pub costs: Vec<f64>,
    pub markers: Vec<StepMarker>,
}

impl Trajectory {
    pub fn horizon(&self) -> usize {
        self.controls.len()
    }

    /// Recompute the states from `x_1`, the controls and the disturbances.
    pub fn replay_states(&self, sys: &LinearSystem) -> Result<Vec<DVector<f64>>> {
        let mut out = Vec::with_capacity(self.states.len());
        let mut x = self.states.first().cloned().unwrap_or_else(|| DVector::zeros(sys.dx()));
        out.push(x.clone());
        for (u, w) in self.controls.iter().zip(&self.disturbances) {
            x = sys.step(&x, u, w)?;
            out.push(x.clone());
        }
        Ok(out)
    }
}

/// Run `controller` on `sys` for `horizon` steps starting at `x1`.
pub fn rollout(
    sys: &LinearSystem,
    controller: &mut dyn Controller,
    noise: &DisturbanceSource,
    horizon: usize,
    x1: &DVector<f64>,
    cost: &dyn ConvexCost,
    options: &RolloutOptions,
) -> Result<Trajectory> {
    ensure_dim("initial state", x1.len(), sys.dx())?;
    ensure_dim("disturbance dimension", noise.dx, sys.dx())?;
    ensure_dim("cost state dimension", cost.dx(), sys.dx())?;
    ensure_dim("cost control dimension", cost.du(), sys.du())?;
    let start = Instant::now();
    let mut stream = noise.stream();
    let mut traj = Trajectory {
        states: Vec::with_capacity(horizon + 1),
        controls: Vec::with_capacity(horizon),
        disturbances: Vec::with_capacity(horizon),
        costs: Vec::with_capacity(horizon),
        markers: Vec::with_capacity(horizon),
    };
    let mut x = x1.clone();
    traj.states.push(x.clone());
    let mut last_cost = None;
    for t in 1..=horizon {
        let u = controller.act(&Observation { t, state: &x, last_cost })?;
        if u.len() != sys.du() {
            return Err(Error::Dimension(format!("control at t={t}: expected {}, got {}", sys.du(), u.len())));
        }
        if !vec_all_finite(&u) {
            return Err(Error::NonFinite(format!("controller `{}` produced a non-finite control at t={t}", controller.name())));
        }
        let c = cost.value(x.as_slice(), u.as_slice());
        let w = stream.next_disturbance();
        let next = sys.step(&x, &u, &w)?;
        let norm = next.norm();
        if !(norm <= options.blowup) {
            return Err(Error::Unstable { t, norm });
        }
        traj.markers.push(controller.marker());
        traj.controls.push(u);
        traj.disturbances.push(w);
        traj.costs.push(c);
        traj.states.push(next.clone());
        x = next;
        last_cost = Some(c);
        if let Some(budget) = options.budget {
            if t % 256 == 0 && start.elapsed() > budget {
                return Err(Error::Budget { secs: budget.as_secs(), t });
            }
        }
    }
    Ok(traj)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lds::cost::SeparableCost;
    use nalgebra::DMatrix;

    struct Zero(usize);

    impl Controller for Zero {
        fn name(&self) -> &str {
            "zero"
        }

        fn act(&mut self, _: &Observation<'_>) -> Result<DVector<f64>> {
            Ok(DVector::zeros(self.0))
        }
    }

    struct Broken;

    impl Controller for Broken {
        fn name(&self) -> &str {
            "broken"
        }

        fn act(&mut self, obs: &Observation<'_>) -> Result<DVector<f64>> {
            Ok(DVector::from_element(1, if obs.t == 3 { f64::NAN } else { 0.0 }))
        }
    }

    #[test]
    fn zero_dynamics_zero_control_follows_noise() {
        let sys = LinearSystem::new(DMatrix::zeros(2, 2), DMatrix::zeros(2, 1), 1.0, 0.5, 1.0).unwrap();
        let cost = SeparableCost::zero(2, 1);
        let noise = DisturbanceSource::gaussian(2, 9);
        let traj = rollout(&sys, &mut Zero(1), &noise, 50, &DVector::zeros(2), &cost, &Default::default()).unwrap();
        for t in 0..50 {
            assert_eq!(traj.states[t + 1], traj.disturbances[t]);
        }
    }

    #[test]
    fn non_finite_control_reports_time() {
        let sys = LinearSystem::random(2, 1, 0.5, 1.0, 1).unwrap();
        let cost = SeparableCost::zero(2, 1);
        let noise = DisturbanceSource::gaussian(2, 9);
        let err = rollout(&sys, &mut Broken, &noise, 10, &DVector::zeros(2), &cost, &Default::default()).unwrap_err();
        assert!(err.to_string().contains("t=3"), "{err}");
    }
}
