//! Phased elimination over controls when the state has no memory:
//! `y_t = B u_t + w_t`, cost `c(y_t)`, controls restricted to `‖u‖ ≤ U`.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::control::regret::{ComparatorValue, PlayedPolicy, PolicySegment, RegretLedger};
use crate::control::schedule::EpochSchedule;
use crate::dfc::policy::DfcPolicy;
use crate::dfc::surrogate::{gaussian_expected_cost, Expectation};
use crate::error::{ensure_dim, Error, Result};
use crate::geometry::ellipsoid::OptimizeOptions;
use crate::geometry::minimize::{region_minimize, MinimizeOptions};
use crate::geometry::region::{ConstraintMeta, ConvexFunction, NormBudget, Region, SublevelConstraint};
use crate::geometry::spanner::{barycentric_spanner, SpannerKind, SpannerOptions};
use crate::lds::cost::ConvexCost;
use crate::lds::rollout::{Controller, Observation, StepMarker, Trajectory};
use crate::linalg::{stack, to_rows};
use crate::rng;

/// `J(u|B) = E c(B u + w, u)` with `w ~ N(0, I)`, as a function of `u`.
#[derive(Debug, Clone)]
pub struct ControlObjective {
    b: DMatrix<f64>,
    cost: Arc<dyn ConvexCost>,
    expectation: Expectation,
    cov: DMatrix<f64>,
}

impl ControlObjective {
    pub fn new(b: DMatrix<f64>, cost: Arc<dyn ConvexCost>, expectation: Expectation) -> Result<Self> {
        ensure_dim("cost state dimension", cost.dx(), b.nrows())?;
        ensure_dim("cost control dimension", cost.du(), b.ncols())?;
        let (dx, du) = (b.nrows(), b.ncols());
        let mut cov = DMatrix::zeros(dx + du, dx + du);
        cov.view_mut((0, 0), (dx, dx)).fill_with_identity();
        Ok(Self { b, cost, expectation, cov })
    }

    fn eval(&self, u: &DVector<f64>) -> Result<(f64, f64, DVector<f64>)> {
        ensure_dim("control", u.len(), self.b.ncols())?;
        let mean = stack(&(&self.b * u), u);
        let (v, se, g) = gaussian_expected_cost(self.cost.as_ref(), &mean, &self.cov, self.expectation)?;
        let dx = self.b.nrows();
        let grad = self.b.transpose() * g.rows(0, dx) + g.rows(dx, u.len());
        Ok((v, se, grad))
    }
}

impl ConvexFunction for ControlObjective {
    fn dim(&self) -> usize {
        self.b.ncols()
    }

    fn value_grad(&self, x: &DVector<f64>) -> Result<(f64, DVector<f64>)> {
        let (v, _, g) = self.eval(x)?;
        Ok((v, g))
    }

    fn stderr(&self, x: &DVector<f64>) -> Result<f64> {
        Ok(self.eval(x)?.1)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WarmupCaseConfig {
    /// Control norm bound `U`.
    pub u_bound: f64,
    pub scale_t: f64,
    /// Ridge regularizer for `B̂`.
    pub lambda: f64,
    pub spanner_c: f64,
    pub mc_samples: usize,
    pub quadrature: bool,
}

impl Default for WarmupCaseConfig {
    fn default() -> Self {
        Self { u_bound: 2.0, scale_t: 0.002, lambda: 1.0, spanner_c: 2.0, mc_samples: 4096, quadrature: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlEpochRecord {
    pub epoch: usize,
    pub epsilon: f64,
    pub t_r: usize,
    pub start: usize,
    pub spanner: Vec<Vec<f64>>,
    pub b_hat: Option<Vec<Vec<f64>>>,
    pub region_min: Option<f64>,
    pub threshold: Option<f64>,
    pub warning: Option<String>,
}

pub struct WarmupCaseController {
    cfg: WarmupCaseConfig,
    dx: usize,
    du: usize,
    cost: Arc<dyn ConvexCost>,
    schedule: EpochSchedule,
    seed: u64,
    region: Region,
    gram: DMatrix<f64>,
    cross: DMatrix<f64>,
    prev_u: Option<DVector<f64>>,
    plan: Vec<DVector<f64>>,
    idx: usize,
    left: usize,
    r: usize,
    frozen: Option<DVector<f64>>,
    records: Vec<ControlEpochRecord>,
    segments: Vec<PolicySegment>,
    marker: StepMarker,
    b_override: Option<DMatrix<f64>>,
}

impl WarmupCaseController {
    pub fn new(cfg: WarmupCaseConfig, dx: usize, du: usize, beta: f64, cost: Arc<dyn ConvexCost>, seed: u64) -> Result<Self> {
        ensure_dim("cost state dimension", cost.dx(), dx)?;
        ensure_dim("cost control dimension", cost.du(), du)?;
        if !(cfg.lambda > 0.0) {
            return Err(Error::InvalidArgument("ridge lambda must be positive".into()));
        }
        let region = Region::new(NormBudget::ball(du, cfg.u_bound)?, DVector::zeros(du))?;
        Ok(Self {
            schedule: EpochSchedule::no_dynamics(cfg.scale_t, du, beta),
            cfg,
            dx,
            du,
            cost,
            seed,
            region,
            gram: DMatrix::zeros(du, du),
            cross: DMatrix::zeros(dx, du),
            prev_u: None,
            plan: Vec::new(),
            idx: 0,
            left: 0,
            r: 0,
            frozen: None,
            records: Vec::new(),
            segments: Vec::new(),
            marker: StepMarker::default(),
            b_override: None,
        })
    }

    /// Use `b` instead of the ridge estimate at every elimination.
    pub fn with_estimate_override(mut self, b: DMatrix<f64>) -> Self {
        self.b_override = Some(b);
        self
    }

    pub fn region(&self) -> &Region {
        &self.region
    }

    pub fn epochs(&self) -> &[ControlEpochRecord] {
        &self.records
    }

    /// `B̂ = S (V + λI)⁻¹`, the ridge fit of `y_s ≈ B u_s` with zero prior.
    pub fn b_hat(&self) -> Result<DMatrix<f64>> {
        let v = &self.gram + DMatrix::identity(self.du, self.du) * self.cfg.lambda;
        let chol = v.cholesky().ok_or_else(|| Error::Singular("ridge Gram matrix".into()))?;
        Ok(chol.solve(&self.cross.transpose()).transpose())
    }

    fn expectation(&self) -> Expectation {
        if self.cfg.quadrature && self.cost.gaussian_form().is_some() {
            Expectation::Quadrature
        } else {
            Expectation::MonteCarlo {
                samples: self.cfg.mc_samples,
                seed: rng::derive_seed(self.seed, &[rng::label::SURROGATE, self.r as u64]),
            }
        }
    }

    fn start_epoch(&mut self, r: usize, t: usize) -> Result<()> {
        self.r = r;
        let t_r = self.schedule.length(r);
        let opts = SpannerOptions {
            c: self.cfg.spanner_c,
            kind: SpannerKind::Linear,
            optimize: OptimizeOptions::default(),
            ..SpannerOptions::default()
        };
        let mut rec = ControlEpochRecord {
            epoch: r,
            epsilon: EpochSchedule::epsilon(r),
            t_r,
            start: t,
            spanner: Vec::new(),
            b_hat: None,
            region_min: None,
            threshold: None,
            warning: None,
        };
        match barycentric_spanner(&self.region, &opts) {
            Ok(sp) => {
                self.plan = sp.elements();
                rec.spanner = self.plan.iter().map(|v| v.as_slice().to_vec()).collect();
                self.idx = 0;
                self.left = t_r;
            }
            Err(e) => {
                let msg = format!("epoch {r}: spanner construction failed ({e}); playing the region witness");
                log::warn!("{msg}");
                rec.warning = Some(msg);
                self.frozen = Some(self.region.witness.clone());
            }
        }
        self.records.push(rec);
        Ok(())
    }

    fn eliminate(&mut self) -> Result<()> {
        let eps = EpochSchedule::epsilon(self.r);
        let b = match &self.b_override {
            Some(b) => b.clone(),
            None => self.b_hat()?,
        };
        let objective: Arc<dyn ConvexFunction> =
            Arc::new(ControlObjective::new(b.clone(), self.cost.clone(), self.expectation())?);
        let opts = MinimizeOptions { tol: eps / 4.0, max_iter: 300, ..MinimizeOptions::default() };
        let min = region_minimize(&self.region, objective.as_ref(), &opts)?;
        let margin = 3.0 * objective.stderr(&min.point)?;
        let threshold = min.value + 3.0 * eps + margin;
        let meta = ConstraintMeta { epoch: self.r, epsilon: eps, min_value: min.value, margin };
        self.region
            .push_constraint(SublevelConstraint { function: objective, threshold, meta }, min.point.clone())?;
        if let Some(rec) = self.records.last_mut() {
            rec.b_hat = Some(to_rows(&b));
            rec.region_min = Some(min.value);
            rec.threshold = Some(threshold);
            if rec.warning.is_none() {
                rec.warning = min.warning;
            }
        }
        Ok(())
    }

    fn next_control(&mut self, t: usize) -> Result<(DVector<f64>, bool)> {
        if self.records.is_empty() {
            self.start_epoch(1, t)?;
        }
        let mut switched = false;
        loop {
            if let Some(u) = &self.frozen {
                return Ok((u.clone(), switched));
            }
            if self.left > 0 {
                let first = self.left == self.schedule.length(self.r);
                self.left -= 1;
                return Ok((self.plan[self.idx].clone(), switched || first));
            }
            if self.idx + 1 < self.plan.len() {
                self.idx += 1;
                self.left = self.schedule.length(self.r);
                continue;
            }
            self.eliminate()?;
            self.start_epoch(self.r + 1, t)?;
            switched = true;
        }
    }
}

impl Controller for WarmupCaseController {
    fn name(&self) -> &str {
        "warmup-case"
    }

    fn act(&mut self, obs: &Observation<'_>) -> Result<DVector<f64>> {
        if let Some(u) = self.prev_u.take() {
            // y_{t-1} = x_t.
            self.gram.ger(1.0, &u, &u, 1.0);
            self.cross.ger(1.0, obs.state, &u, 1.0);
        }
        let (u, switched) = self.next_control(obs.t)?;
        if switched || self.segments.is_empty() {
            self.segments.push(PolicySegment { start: obs.t, policy: PlayedPolicy::Control(u.clone()) });
        }
        self.marker = StepMarker { epoch: self.r, policy_switch: switched || obs.t == 1 };
        self.prev_u = Some(u.clone());
        Ok(u)
    }

    fn marker(&self) -> StepMarker {
        self.marker
    }

    fn policy_log(&self) -> Vec<PolicySegment> {
        self.segments.clone()
    }

    fn audit(&self) -> serde_json::Value {
        serde_json::json!({ "controller": "warmup-case", "dx": self.dx, "epochs": self.records })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ControlEtcConfig {
    pub u_bound: f64,
    /// Fixed exploration length; overrides the horizon-based rule.
    pub explore_len: Option<usize>,
    pub explore_scale: f64,
    pub explore_exponent: f64,
    pub lambda: f64,
    pub mc_samples: usize,
    pub quadrature: bool,
}

impl Default for ControlEtcConfig {
    fn default() -> Self {
        Self {
            u_bound: 2.0,
            explore_len: None,
            explore_scale: 1.0,
            explore_exponent: 2.0 / 3.0,
            lambda: 1.0,
            mc_samples: 4096,
            quadrature: true,
        }
    }
}

impl ControlEtcConfig {
    pub fn explore_len(&self, horizon: usize) -> usize {
        self.explore_len
            .unwrap_or_else(|| (self.explore_scale * (horizon as f64).powf(self.explore_exponent)).ceil() as usize)
            .min(horizon)
    }
}

/// Explore-then-commit over controls: Gaussian controls projected onto the
/// ball `‖u‖ ≤ U`, one ridge fit of `B`, then the minimizer of `J(u|B̂)`.
pub struct ControlEtcController {
    cfg: ControlEtcConfig,
    du: usize,
    cost: Arc<dyn ConvexCost>,
    ball: NormBudget,
    explore_len: usize,
    seed: u64,
    rng: rng::StreamRng,
    gram: DMatrix<f64>,
    cross: DMatrix<f64>,
    prev_u: Option<DVector<f64>>,
    committed: Option<DVector<f64>>,
    segments: Vec<PolicySegment>,
    marker: StepMarker,
}

impl ControlEtcController {
    pub fn new(cfg: ControlEtcConfig, dx: usize, du: usize, cost: Arc<dyn ConvexCost>, horizon: usize, seed: u64) -> Result<Self> {
        ensure_dim("cost state dimension", cost.dx(), dx)?;
        ensure_dim("cost control dimension", cost.du(), du)?;
        let explore_len = cfg.explore_len(horizon);
        if explore_len == 0 {
            return Err(Error::InvalidArgument("exploration length must be at least 1".into()));
        }
        Ok(Self {
            ball: NormBudget::ball(du, cfg.u_bound)?,
            rng: rng::stream(seed, &[rng::label::EXPLORATION]),
            gram: DMatrix::zeros(du, du),
            cross: DMatrix::zeros(dx, du),
            prev_u: None,
            committed: None,
            segments: Vec::new(),
            marker: StepMarker::default(),
            cfg,
            du,
            cost,
            explore_len,
            seed,
        })
    }

    pub fn explore_len(&self) -> usize {
        self.explore_len
    }

    pub fn committed(&self) -> Option<&DVector<f64>> {
        self.committed.as_ref()
    }

    fn commit(&mut self) -> Result<DVector<f64>> {
        let v = &self.gram + DMatrix::identity(self.du, self.du) * self.cfg.lambda;
        let chol = v.cholesky().ok_or_else(|| Error::Singular("ridge Gram matrix".into()))?;
        let b_hat = chol.solve(&self.cross.transpose()).transpose();
        let expectation = if self.cfg.quadrature && self.cost.gaussian_form().is_some() {
            Expectation::Quadrature
        } else {
            Expectation::MonteCarlo {
                samples: self.cfg.mc_samples,
                seed: rng::derive_seed(self.seed, &[rng::label::SURROGATE]),
            }
        };
        let obj = ControlObjective::new(b_hat, self.cost.clone(), expectation)?;
        let region = Region::new(self.ball.clone(), DVector::zeros(self.du))?;
        let opts = MinimizeOptions { tol: 1e-6, max_iter: 1000, ..MinimizeOptions::default() };
        Ok(region_minimize(&region, &obj, &opts)?.point)
    }
}

impl Controller for ControlEtcController {
    fn name(&self) -> &str {
        "control-etc"
    }

    fn act(&mut self, obs: &Observation<'_>) -> Result<DVector<f64>> {
        if let Some(u) = self.prev_u.take() {
            self.gram.ger(1.0, &u, &u, 1.0);
            self.cross.ger(1.0, obs.state, &u, 1.0);
        }
        if obs.t <= self.explore_len {
            let mut u = DVector::zeros(self.du);
            rng::fill_standard_normal(&mut self.rng, u.as_mut_slice());
            let u = self.ball.project(&u);
            self.segments.push(PolicySegment { start: obs.t, policy: PlayedPolicy::Control(u.clone()) });
            self.marker = StepMarker { epoch: 0, policy_switch: true };
            self.prev_u = Some(u.clone());
            return Ok(u);
        }
        let switched = self.committed.is_none();
        if switched {
            let u = self.commit()?;
            self.segments.push(PolicySegment { start: obs.t, policy: PlayedPolicy::Control(u.clone()) });
            self.committed = Some(u);
        }
        self.marker = StepMarker { epoch: 1, policy_switch: switched };
        Ok(self.committed.clone().unwrap_or_else(|| DVector::zeros(self.du)))
    }

    fn marker(&self) -> StepMarker {
        self.marker
    }

    fn policy_log(&self) -> Vec<PolicySegment> {
        self.segments.clone()
    }

    fn audit(&self) -> serde_json::Value {
        serde_json::json!({
            "controller": "control-etc",
            "explore_len": self.explore_len,
            "committed": self.committed.as_ref().map(|u| u.as_slice().to_vec()),
        })
    }
}

/// `min_{‖u‖≤U} J(u|B)`.
pub fn control_comparator(
    b: &DMatrix<f64>,
    cost: Arc<dyn ConvexCost>,
    u_bound: f64,
    expectation: Expectation,
) -> Result<ComparatorValue> {
    let obj = ControlObjective::new(b.clone(), cost, expectation)?;
    let region = Region::new(NormBudget::ball(b.ncols(), u_bound)?, DVector::zeros(b.ncols()))?;
    let opts = MinimizeOptions { tol: 1e-8, max_iter: 2000, ..MinimizeOptions::default() };
    let min = region_minimize(&region, &obj, &opts)?;
    Ok(ComparatorValue {
        // A control is stored as a one-block policy with d_x = 1.
        policy: DfcPolicy::from_blocks(vec![DMatrix::from_column_slice(b.ncols(), 1, min.point.as_slice())])?,
        value: min.value,
        stderr: obj.stderr(&min.point)?,
        warning: min.warning,
    })
}

/// Ledger for the no-dynamics case: the cost of step `t` is `c(x_{t+1}, u_t)`
/// and the per-step surrogate is `J(u_t|B)`.
pub fn control_regret(
    traj: &Trajectory,
    b: &DMatrix<f64>,
    cost: &Arc<dyn ConvexCost>,
    j_star: &ComparatorValue,
    expectation: Expectation,
) -> Result<RegretLedger> {
    let n = traj.horizon();
    let obj = ControlObjective::new(b.clone(), cost.clone(), expectation)?;
    let mut realized = Vec::with_capacity(n);
    let mut surrogate = Vec::with_capacity(n);
    let mut cache: Option<(DVector<f64>, f64)> = None;
    for t in 0..n {
        let u = &traj.controls[t];
        realized.push(cost.value(traj.states[t + 1].as_slice(), u.as_slice()));
        let v = match &cache {
            Some((cu, v)) if cu == u => *v,
            _ => {
                let v = obj.value(u)?;
                cache = Some((u.clone(), v));
                v
            }
        };
        surrogate.push(v);
    }
    let mut cumulative_regret = Vec::with_capacity(n);
    let mut cumulative_avg_regret = Vec::with_capacity(n);
    let (mut r, mut ra) = (0.0, 0.0);
    for t in 0..n {
        r += realized[t] - j_star.value;
        ra += surrogate[t] - j_star.value;
        cumulative_regret.push(r);
        cumulative_avg_regret.push(ra);
    }
    Ok(RegretLedger {
        j_star: j_star.value,
        j_star_stderr: j_star.stderr,
        realized,
        surrogate,
        cumulative_regret,
        cumulative_avg_regret,
        markers: traj.markers.clone(),
    })
}
