//! Online gradient descent over disturbance-feedback policies with a fixed
//! stabilizing gain, a known input matrix and estimated `A` and disturbances.

use std::collections::VecDeque;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::control::regret::{PlayedPolicy, PolicySegment};
use crate::control::ProblemInfo;
use crate::dfc::policy::{DfcPolicy, PolicyClassSpec};
use crate::dfc::surrogate::SurrogateModel;
use crate::error::{ensure_dim, Error, Result};
use crate::geometry::region::NormBudget;
use crate::lds::cost::{ConvexCost, FeedbackCost};
use crate::lds::rollout::{Controller, Observation, StepMarker};

const LS_RIDGE: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GpcConfig {
    pub h: usize,
    pub g: f64,
    /// Step size `η_t = eta / √t`.
    pub eta: f64,
}

impl Default for GpcConfig {
    fn default() -> Self {
        Self { h: 3, g: 1.0, eta: 0.1 }
    }
}

/// Cost recomputed from the estimated decomposition at step `t` versus the
/// realized cost. The state error is exactly `(Â + BK)^{H+1} x_{t-H-1}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimulationCheck {
    pub t: usize,
    pub residual: f64,
    /// `‖x_{t-H-1}‖`.
    pub anchor_norm: f64,
    /// `‖(Â_t + BK)^{H+1}‖`.
    pub closed_loop_power: f64,
}

pub struct GpcController {
    cfg: GpcConfig,
    spec: PolicyClassSpec,
    b: DMatrix<f64>,
    k: DMatrix<f64>,
    cost: Arc<dyn ConvexCost>,
    feedback_cost: FeedbackCost,
    base: NormBudget,
    m: DfcPolicy,
    gram: DMatrix<f64>,
    cross: DMatrix<f64>,
    count: usize,
    a_hat: DMatrix<f64>,
    w_hat: Vec<DVector<f64>>,
    /// `(x_s, u_s)` of the last `H + 2` steps, oldest first.
    recent: VecDeque<(DVector<f64>, DVector<f64>)>,
    checks: Vec<SimulationCheck>,
    segments: Vec<PolicySegment>,
    marker: StepMarker,
}

impl GpcController {
    pub fn new(
        cfg: GpcConfig,
        info: ProblemInfo,
        b: DMatrix<f64>,
        k: DMatrix<f64>,
        cost: Arc<dyn ConvexCost>,
    ) -> Result<Self> {
        let spec = PolicyClassSpec::new(cfg.h, cfg.g, info.dx, info.du)?;
        ensure_dim("B rows", b.nrows(), info.dx)?;
        ensure_dim("B cols", b.ncols(), info.du)?;
        if !(cfg.eta >= 0.0) {
            return Err(Error::InvalidArgument("step size must be nonnegative".into()));
        }
        let feedback_cost = FeedbackCost::new(cost.clone(), k.clone())?;
        Ok(Self {
            base: NormBudget::new(spec.block_shapes(), spec.g)?,
            m: spec.zero_policy(),
            gram: DMatrix::zeros(info.dx, info.dx),
            cross: DMatrix::zeros(info.dx, info.dx),
            count: 0,
            a_hat: DMatrix::zeros(info.dx, info.dx),
            w_hat: Vec::new(),
            recent: VecDeque::new(),
            checks: Vec::new(),
            segments: Vec::new(),
            marker: StepMarker::default(),
            cfg,
            spec,
            b,
            k,
            cost,
            feedback_cost,
        })
    }

    /// Start OGD from `m` instead of the zero policy.
    pub fn with_initial_policy(mut self, m: DfcPolicy) -> Result<Self> {
        ensure_dim("policy dimension", m.dim(), self.spec.dim())?;
        self.m = m;
        Ok(self)
    }

    pub fn policy(&self) -> &DfcPolicy {
        &self.m
    }

    pub fn a_hat(&self) -> &DMatrix<f64> {
        &self.a_hat
    }

    pub fn simulation_checks(&self) -> &[SimulationCheck] {
        &self.checks
    }

    pub fn gain(&self) -> &DMatrix<f64> {
        &self.k
    }

    fn identifiable(&self) -> bool {
        self.count >= self.spec.dx + self.spec.du
    }

    /// Least squares for `A` over the whole history with `B` known.
    fn refit(&mut self) -> Result<()> {
        if !self.identifiable() {
            return Ok(());
        }
        let dx = self.spec.dx;
        let g = &self.gram + DMatrix::identity(dx, dx) * LS_RIDGE;
        let chol = g.cholesky().ok_or_else(|| Error::Singular("least-squares Gram matrix".into()))?;
        self.a_hat = chol.solve(&self.cross.transpose()).transpose();
        Ok(())
    }

    fn closed_loop(&self) -> DMatrix<f64> {
        &self.a_hat + &self.b * &self.k
    }

    /// Window `ŵ_{t-1}, …, ŵ_{t-1-2H}` (zeros before the start), newest first.
    fn window(&self) -> Vec<DVector<f64>> {
        let n = self.w_hat.len();
        (0..=2 * self.spec.h)
            .map(|i| if i < n { self.w_hat[n - 1 - i].clone() } else { DVector::zeros(self.spec.dx) })
            .collect()
    }

    fn simulation_check(&mut self, t: usize, x: &DVector<f64>, v: &DVector<f64>) -> Result<()> {
        let h = self.spec.h;
        if !self.identifiable() || self.recent.len() < h + 1 {
            return Ok(());
        }
        // recent holds (x_s, u_s) for s = t-H-1 … t-1 (the last H+1 steps).
        let ak = self.closed_loop();
        let n = self.recent.len();
        let mut x_hat = DVector::zeros(self.spec.dx);
        let mut pow = DMatrix::identity(self.spec.dx, self.spec.dx);
        for i in 0..=h {
            let (xs, us) = &self.recent[n - 1 - i];
            let x_next = if i == 0 { x } else { &self.recent[n - i].0 };
            // ŵ'_s with the current estimate, and v_s = u_s − K x_s.
            let w = x_next - &self.a_hat * xs - &self.b * us;
            let vs = us - &self.k * xs;
            x_hat += &pow * (&self.b * vs + w);
            pow = &ak * pow;
        }
        let anchor = &self.recent[n - 1 - h].0;
        let realized = self.feedback_cost.value(x.as_slice(), v.as_slice());
        let rebuilt = self.feedback_cost.value(x_hat.as_slice(), v.as_slice());
        self.checks.push(SimulationCheck {
            t,
            residual: (realized - rebuilt).abs(),
            anchor_norm: anchor.norm(),
            closed_loop_power: crate::linalg::spectral_norm(&pow),
        });
        Ok(())
    }

    /// `M ← Π[M − η_t ∇ f_t(M)]` with `f_t(M) = c(x̂(M), K x̂(M) + v(M))`.
    fn ogd_step(&mut self, t: usize) -> Result<()> {
        if self.cfg.eta == 0.0 {
            return Ok(());
        }
        let model = SurrogateModel::new(&self.closed_loop(), &self.b, self.spec.h)?;
        let eta_w = self.window();
        let (xm, vm) = model.pair(&self.m, &eta_w)?;
        let (dx, du) = (self.spec.dx, self.spec.du);
        let mut gz = vec![0.0; dx + du];
        let (gx, gu) = gz.split_at_mut(dx);
        self.feedback_cost.value_grad(xm.as_slice(), vm.as_slice(), gx, gu);
        let gz = DVector::from_vec(gz);
        let mut eta_stack = DVector::zeros(eta_w.len() * dx);
        for (i, e) in eta_w.iter().enumerate() {
            eta_stack.rows_mut(i * dx, dx).copy_from(e);
        }
        let grad = model.pullback(&(&gz * eta_stack.transpose()))?;
        let step = self.cfg.eta / (t as f64).sqrt();
        let next = self.m.flatten() - grad.flatten() * step;
        self.m = self.m.unflatten_like(self.base.project(&next).as_slice())?;
        Ok(())
    }
}

impl Controller for GpcController {
    fn name(&self) -> &str {
        "gpc"
    }

    fn act(&mut self, obs: &Observation<'_>) -> Result<DVector<f64>> {
        let x = obs.state;
        if let Some((px, pu)) = self.recent.back().cloned() {
            let y = x - &self.b * &pu;
            self.gram.ger(1.0, &px, &px, 1.0);
            self.cross.ger(1.0, &y, &px, 1.0);
            self.count += 1;
            self.refit()?;
            self.w_hat.push(x - &self.a_hat * &px - &self.b * &pu);
        }
        let lo = self.w_hat.len().saturating_sub(self.spec.h);
        let v = self.m.control_history(&self.w_hat[lo..]);
        let u = &self.k * x + &v;
        self.simulation_check(obs.t, x, &v)?;
        self.segments.push(PolicySegment {
            start: obs.t,
            policy: PlayedPolicy::Feedback { gain: self.k.clone(), policy: self.m.clone() },
        });
        self.marker = StepMarker { epoch: 0, policy_switch: true };
        self.ogd_step(obs.t)?;
        self.recent.push_back((x.clone(), u.clone()));
        if self.recent.len() > self.spec.h + 1 {
            self.recent.pop_front();
        }
        Ok(u)
    }

    fn marker(&self) -> StepMarker {
        self.marker
    }

    fn policy_log(&self) -> Vec<PolicySegment> {
        self.segments.clone()
    }

    fn audit(&self) -> serde_json::Value {
        let worst = self.checks.iter().map(|c| c.residual).fold(0.0, f64::max);
        serde_json::json!({
            "controller": "gpc",
            "eta": self.cfg.eta,
            "cost_lipschitz": self.cost.lipschitz(),
            "max_simulation_residual": worst,
        })
    }

    fn disturbance_estimates(&self) -> Option<&[DVector<f64>]> {
        Some(&self.w_hat)
    }
}
