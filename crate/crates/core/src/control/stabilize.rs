//! Running a controller on an unstable system behind a fixed stabilizing gain.

use nalgebra::{DMatrix, DVector};

use crate::control::regret::{PlayedPolicy, PolicySegment};
use crate::error::{ensure_dim, Error, Result};
use crate::lds::rollout::{Controller, Observation, StepMarker};

/// Norm budget of the inner controller, `G^unst + κ³/γ`.
pub fn effective_budget(g_unst: f64, kappa: f64, gamma: f64) -> f64 {
    g_unst + kappa.powi(3) / gamma
}

/// Plays `K₀ x_t + u_t` where `u_t` comes from the inner controller, which
/// then faces the closed loop `A + B K₀` and should be built with the cost
/// `c(x, K₀ x + u)` and the budget from [`effective_budget`].
pub struct StabilizedController<C: Controller> {
    k0: DMatrix<f64>,
    inner: C,
    effective_g: f64,
    blowup: f64,
}

impl<C: Controller> StabilizedController<C> {
    pub fn new(k0: DMatrix<f64>, inner: C, effective_g: f64, blowup: f64) -> Self {
        Self { k0, inner, effective_g, blowup }
    }

    pub fn inner(&self) -> &C {
        &self.inner
    }

    pub fn gain(&self) -> &DMatrix<f64> {
        &self.k0
    }
}

impl<C: Controller> Controller for StabilizedController<C> {
    fn name(&self) -> &str {
        "stabilized"
    }

    fn act(&mut self, obs: &Observation<'_>) -> Result<DVector<f64>> {
        let norm = obs.state.norm();
        if !(norm <= self.blowup) {
            return Err(Error::Unstable { t: obs.t, norm });
        }
        let v = self.inner.act(obs)?;
        ensure_dim("inner control", v.len(), self.k0.nrows())?;
        Ok(&self.k0 * obs.state + v)
    }

    fn marker(&self) -> StepMarker {
        self.inner.marker()
    }

    fn policy_log(&self) -> Vec<PolicySegment> {
        self.inner
            .policy_log()
            .into_iter()
            .map(|s| PolicySegment {
                start: s.start,
                policy: match s.policy {
                    PlayedPolicy::Dfc(m) => PlayedPolicy::Feedback { gain: self.k0.clone(), policy: m },
                    PlayedPolicy::Feedback { gain, policy } => {
                        PlayedPolicy::Feedback { gain: gain + &self.k0, policy }
                    }
                    other => PlayedPolicy::Wrapped { gain: self.k0.clone(), inner: Box::new(other) },
                },
            })
            .collect()
    }

    fn audit(&self) -> serde_json::Value {
        serde_json::json!({
            "controller": "stabilized",
            "effective_g": self.effective_g,
            "k0": crate::linalg::to_rows(&self.k0),
            "inner": self.inner.audit(),
        })
    }

    fn disturbance_estimates(&self) -> Option<&[DVector<f64>]> {
        self.inner.disturbance_estimates()
    }
}
