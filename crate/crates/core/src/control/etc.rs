//! Explore-then-commit (certainty equivalence).

use std::sync::Arc;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::control::regret::{PlayedPolicy, PolicySegment};
use crate::control::ProblemInfo;
use crate::dfc::policy::{DfcPolicy, PolicyClassSpec};
use crate::dfc::surrogate::{Expectation, SurrogateCost, SurrogateModel};
use crate::error::{Error, Result};
use crate::estimation::ridge::{estimate_disturbance, RidgeState, SystemEstimate};
use crate::geometry::minimize::{region_minimize, MinimizeOptions};
use crate::geometry::region::{NormBudget, PolicyObjective, Region};
use crate::lds::cost::ConvexCost;
use crate::lds::rollout::{Controller, Observation, StepMarker};
use crate::linalg::to_rows;
use crate::rng::{self, StreamRng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EtcConfig {
    pub h: usize,
    pub g: f64,
    /// Fixed exploration length; overrides the horizon-based rule.
    pub explore_len: Option<usize>,
    /// Exploration length `ceil(explore_scale · T^explore_exponent)`.
    pub explore_scale: f64,
    pub explore_exponent: f64,
    pub lambda: f64,
    pub mc_samples: usize,
    pub quadrature: bool,
}

impl Default for EtcConfig {
    fn default() -> Self {
        Self {
            h: 3,
            g: 1.0,
            explore_len: None,
            explore_scale: 1.0,
            explore_exponent: 2.0 / 3.0,
            lambda: 1.0,
            mc_samples: 4096,
            quadrature: true,
        }
    }
}

impl EtcConfig {
    pub fn explore_len(&self, horizon: usize) -> usize {
        self.explore_len
            .unwrap_or_else(|| (self.explore_scale * (horizon as f64).powf(self.explore_exponent)).ceil() as usize)
            .min(horizon)
    }
}

pub struct EtcController {
    cfg: EtcConfig,
    info: ProblemInfo,
    spec: PolicyClassSpec,
    cost: Arc<dyn ConvexCost>,
    explore_len: usize,
    seed: u64,
    rng: StreamRng,
    ridge: RidgeState,
    history: Vec<(DVector<f64>, DVector<f64>)>,
    estimate: Option<SystemEstimate>,
    policy: Option<DfcPolicy>,
    commit_value: Option<f64>,
    w_hat: Vec<DVector<f64>>,
    prev: Option<(DVector<f64>, DVector<f64>)>,
    segments: Vec<PolicySegment>,
    marker: StepMarker,
}

impl EtcController {
    pub fn new(cfg: EtcConfig, info: ProblemInfo, cost: Arc<dyn ConvexCost>, horizon: usize, seed: u64) -> Result<Self> {
        let spec = PolicyClassSpec::new(cfg.h, cfg.g, info.dx, info.du)?;
        let explore_len = cfg.explore_len(horizon);
        if explore_len == 0 {
            return Err(Error::InvalidArgument("exploration length must be at least 1".into()));
        }
        Ok(Self {
            ridge: RidgeState::with_zero_prior(info.dx, info.du, cfg.lambda)?,
            rng: rng::stream(seed, &[rng::label::EXPLORATION]),
            cfg,
            info,
            spec,
            cost,
            explore_len,
            seed,
            history: Vec::new(),
            estimate: None,
            policy: None,
            commit_value: None,
            w_hat: Vec::new(),
            prev: None,
            segments: Vec::new(),
            marker: StepMarker::default(),
        })
    }

    pub fn explore_len(&self) -> usize {
        self.explore_len
    }

    pub fn committed(&self) -> Option<&DfcPolicy> {
        self.policy.as_ref()
    }

    fn commit(&mut self) -> Result<()> {
        let est = self.ridge.solve()?;
        // Disturbances of the last H exploration steps, for the first controls.
        let h = self.spec.h;
        let n = self.history.len();
        for k in n.saturating_sub(h + 1)..n.saturating_sub(1) {
            let ((x, u), (x_next, _)) = (&self.history[k], &self.history[k + 1]);
            self.w_hat.push(estimate_disturbance(x_next, &est, x, u));
        }
        let expectation = if self.cfg.quadrature && self.cost.gaussian_form().is_some() {
            Expectation::Quadrature
        } else {
            Expectation::MonteCarlo {
                samples: self.cfg.mc_samples,
                seed: rng::derive_seed(self.seed, &[rng::label::SURROGATE]),
            }
        };
        let model = SurrogateModel::new(&est.a_hat, &est.b_hat, h)?;
        let objective = PolicyObjective::new(SurrogateCost::new(model, self.cost.clone(), expectation)?);
        let region = Region::new(NormBudget::new(self.spec.block_shapes(), self.spec.g)?, DVector::zeros(self.spec.dim()))?;
        let opts = MinimizeOptions { tol: 1e-4, max_iter: 1000, ..MinimizeOptions::default() };
        let min = region_minimize(&region, &objective, &opts)?;
        self.policy = Some(DfcPolicy::unflatten(h, self.info.dx, self.info.du, min.point.as_slice())?);
        self.commit_value = Some(min.value);
        self.estimate = Some(est);
        self.history.clear();
        Ok(())
    }
}

impl Controller for EtcController {
    fn name(&self) -> &str {
        "etc"
    }

    fn act(&mut self, obs: &Observation<'_>) -> Result<DVector<f64>> {
        let x = obs.state;
        if let Some((px, pu)) = self.prev.take() {
            match &self.estimate {
                None => self.ridge.update(&px, &pu, x)?,
                Some(est) => self.w_hat.push(estimate_disturbance(x, est, &px, &pu)),
            }
        }
        let mut switched = obs.t == 1;
        let u = if obs.t <= self.explore_len {
            if self.segments.is_empty() {
                self.segments.push(PolicySegment { start: obs.t, policy: PlayedPolicy::Exploration });
            }
            let mut u = DVector::zeros(self.info.du);
            rng::fill_standard_normal(&mut self.rng, u.as_mut_slice());
            if self.history.len() > self.spec.h {
                self.history.remove(0);
            }
            self.history.push((x.clone(), u.clone()));
            u
        } else {
            if self.policy.is_none() {
                // x_t closes the last exploration transition.
                self.history.push((x.clone(), DVector::zeros(self.info.du)));
                self.commit()?;
                let m = self.policy.clone().expect("committed");
                self.segments.push(PolicySegment { start: obs.t, policy: PlayedPolicy::Dfc(m) });
                switched = true;
            }
            let m = self.policy.as_ref().expect("committed");
            let lo = self.w_hat.len().saturating_sub(self.spec.h);
            m.control_history(&self.w_hat[lo..])
        };
        self.marker = StepMarker { epoch: usize::from(obs.t > self.explore_len), policy_switch: switched };
        self.prev = Some((x.clone(), u.clone()));
        Ok(u)
    }

    fn marker(&self) -> StepMarker {
        self.marker
    }

    fn policy_log(&self) -> Vec<PolicySegment> {
        self.segments.clone()
    }

    fn audit(&self) -> serde_json::Value {
        serde_json::json!({
            "controller": "etc",
            "explore_len": self.explore_len,
            "a_hat": self.estimate.as_ref().map(|e| to_rows(&e.a_hat)),
            "b_hat": self.estimate.as_ref().map(|e| to_rows(&e.b_hat)),
            "commit_value": self.commit_value,
        })
    }
}
