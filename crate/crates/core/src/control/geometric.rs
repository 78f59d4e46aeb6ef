//! Phased elimination over disturbance-feedback policies, exploring with
//! affine barycentric spanners of the surviving region.

use std::sync::Arc;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::control::regret::{PlayedPolicy, PolicySegment};
use crate::control::schedule::EpochSchedule;
use crate::control::ProblemInfo;
use crate::dfc::policy::{DfcPolicy, PolicyClassSpec};
use crate::dfc::surrogate::{Expectation, SurrogateCost, SurrogateModel};
use crate::error::{ensure_dim, Error, Result};
use crate::estimation::online::OnlineIdentifier;
use crate::estimation::ridge::{lambda_schedule, SystemEstimate};
use crate::geometry::ellipsoid::OptimizeOptions;
use crate::geometry::minimize::{region_minimize, MinimizeOptions};
use crate::geometry::region::{
    ConstraintMeta, ConvexFunction, NormBudget, PolicyObjective, Region, SublevelConstraint,
};
use crate::geometry::spanner::{barycentric_spanner, SpannerKind, SpannerOptions, SpannerSet};
use crate::lds::cost::ConvexCost;
use crate::lds::rollout::{Controller, Observation, StepMarker};
use crate::linalg::to_rows;
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeometricConfig {
    /// Policy memory `H`.
    pub h: usize,
    /// Norm budget `G` of the base class.
    pub g: f64,
    pub scale_t: f64,
    /// Index `r₀` of the first epoch (`ε_{r₀} = 2^{-r₀}`); skips epochs whose
    /// margin `3ε_r` exceeds the range of the cost.
    pub first_epoch: usize,
    pub lambda_scale: f64,
    /// Monte-Carlo sample size when quadrature is unavailable or disabled.
    pub mc_samples: usize,
    pub quadrature: bool,
    pub spanner_c: f64,
    pub rel_accuracy: f64,
    /// Re-solve the ridge problem every `solve_stride` steps.
    pub solve_stride: usize,
    /// Iteration cap of each region-minimization restart.
    pub minimize_iters: usize,
}

impl Default for GeometricConfig {
    fn default() -> Self {
        Self {
            h: 3,
            g: 1.0,
            scale_t: 3e-4,
            first_epoch: 4,
            lambda_scale: 1e-3,
            mc_samples: 4096,
            quadrature: true,
            spanner_c: 2.0,
            rel_accuracy: 1.01,
            solve_stride: 1,
            minimize_iters: 300,
        }
    }
}

impl GeometricConfig {
    pub fn spec(&self, info: &ProblemInfo) -> Result<PolicyClassSpec> {
        PolicyClassSpec::new(self.h, self.g, info.dx, info.du)
    }
}

/// Where the initial estimate `(A₀, B₀)` comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Initialization {
    /// Supplied estimates, e.g. from an earlier identification run.
    Given { a: Vec<Vec<f64>>, b: Vec<Vec<f64>> },
    /// Play `u ~ N(0, I)` for `steps` steps first and use the regularized
    /// least-squares fit.
    Warmup { steps: usize },
}

impl Initialization {
    pub fn given(est: &SystemEstimate) -> Self {
        Initialization::Given { a: to_rows(&est.a_hat), b: to_rows(&est.b_hat) }
    }
}

/// Audit entry for one completed (or truncated) epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub epsilon: f64,
    pub t_r: usize,
    /// First step of the epoch.
    pub start: usize,
    /// Step at which the elimination ran, if it did.
    pub end: Option<usize>,
    pub spanner_log_abs_det: f64,
    pub spanner_det_sign: f64,
    pub spanner_oracle_calls: usize,
    pub spanner_swaps: usize,
    pub spanner_certified: bool,
    /// Flattened spanner elements, `v₀` first.
    pub spanner: Vec<Vec<f64>>,
    pub a_hat: Option<Vec<Vec<f64>>>,
    pub b_hat: Option<Vec<Vec<f64>>>,
    pub region_min: Option<f64>,
    pub threshold: Option<f64>,
    pub minimizer: Option<Vec<f64>>,
    pub warning: Option<String>,
}

struct EpochPlan {
    r: usize,
    /// `(policy, steps)` in execution order.
    plan: Vec<(DfcPolicy, usize)>,
    idx: usize,
    left: usize,
}

pub struct GeometricController {
    cfg: GeometricConfig,
    info: ProblemInfo,
    spec: PolicyClassSpec,
    cost: Arc<dyn ConvexCost>,
    schedule: EpochSchedule,
    seed: u64,
    region: Region,
    ident: OnlineIdentifier,
    epoch: Option<EpochPlan>,
    frozen: Option<DfcPolicy>,
    records: Vec<EpochRecord>,
    segments: Vec<PolicySegment>,
    marker: StepMarker,
    estimate_override: Option<SystemEstimate>,
    warnings: Vec<String>,
}

impl GeometricController {
    pub fn new(
        cfg: GeometricConfig,
        info: ProblemInfo,
        cost: Arc<dyn ConvexCost>,
        init: Initialization,
        seed: u64,
    ) -> Result<Self> {
        let spec = cfg.spec(&info)?;
        if cfg.solve_stride == 0 {
            return Err(Error::InvalidArgument("solve_stride must be positive".into()));
        }
        let lambda = lambda_schedule(&spec, info.kappa, info.beta, info.gamma, cfg.lambda_scale);
        let ident = match &init {
            Initialization::Given { a, b } => {
                let est = SystemEstimate::new(crate::linalg::from_rows(a)?, crate::linalg::from_rows(b)?);
                ensure_dim("initial A rows", est.a_hat.nrows(), info.dx)?;
                ensure_dim("initial A cols", est.a_hat.ncols(), info.dx)?;
                ensure_dim("initial B cols", est.b_hat.ncols(), info.du)?;
                OnlineIdentifier::from_estimate(lambda, est, cfg.solve_stride)?
            }
            Initialization::Warmup { steps } => OnlineIdentifier::with_warmup(
                lambda,
                info.dx,
                info.du,
                info.kappa,
                info.beta,
                *steps,
                cfg.solve_stride,
                seed,
            )?,
        };
        let base = NormBudget::new(spec.block_shapes(), spec.g)?;
        let region = Region::new(base, DVector::zeros(spec.dim()))?;
        let schedule = EpochSchedule::control(cfg.scale_t, info.kappa, info.gamma, info.dx, info.du, cfg.h);
        Ok(Self {
            cfg,
            info,
            spec,
            cost,
            schedule,
            seed,
            region,
            ident,
            epoch: None,
            frozen: None,
            records: Vec::new(),
            segments: Vec::new(),
            marker: StepMarker::default(),
            estimate_override: None,
            warnings: Vec::new(),
        })
    }

    /// Use `est` instead of the ridge estimate in every elimination step
    /// (oracle-estimate ablation; the executed controls still use `ŵ`).
    pub fn with_estimate_override(mut self, est: SystemEstimate) -> Self {
        self.estimate_override = Some(est);
        self
    }

    pub fn spec(&self) -> &PolicyClassSpec {
        &self.spec
    }

    pub fn region(&self) -> &Region {
        &self.region
    }

    pub fn epochs(&self) -> &[EpochRecord] {
        &self.records
    }

    pub fn schedule(&self) -> &EpochSchedule {
        &self.schedule
    }

    pub fn identifier(&self) -> &OnlineIdentifier {
        &self.ident
    }

    fn expectation(&self, epoch: usize) -> Expectation {
        let mc = Expectation::MonteCarlo {
            samples: self.cfg.mc_samples,
            seed: rng::derive_seed(self.seed, &[rng::label::SURROGATE, epoch as u64]),
        };
        if self.cfg.quadrature && self.cost.gaussian_form().is_some() {
            Expectation::Quadrature
        } else {
            mc
        }
    }

    fn spanner_options(&self) -> SpannerOptions {
        SpannerOptions {
            c: self.cfg.spanner_c,
            kind: SpannerKind::Affine,
            optimize: OptimizeOptions { rel_accuracy: self.cfg.rel_accuracy, ..OptimizeOptions::default() },
            ..SpannerOptions::default()
        }
    }

    fn start_epoch(&mut self, r: usize, t: usize) -> Result<()> {
        let t_r = self.schedule.length(r);
        let mut record = EpochRecord {
            epoch: r,
            epsilon: EpochSchedule::epsilon(r),
            t_r,
            start: t,
            end: None,
            spanner_log_abs_det: f64::NAN,
            spanner_det_sign: 0.0,
            spanner_oracle_calls: 0,
            spanner_swaps: 0,
            spanner_certified: false,
            spanner: Vec::new(),
            a_hat: None,
            b_hat: None,
            region_min: None,
            threshold: None,
            minimizer: None,
            warning: None,
        };
        match barycentric_spanner(&self.region, &self.spanner_options()) {
            Ok(sp) => {
                let plan = self.plan_from(&sp, t_r)?;
                record.spanner_log_abs_det = sp.log_abs_det;
                record.spanner_det_sign = sp.det_sign;
                record.spanner_oracle_calls = sp.oracle_calls;
                record.spanner_swaps = sp.swaps;
                record.spanner_certified = sp.all_certified;
                record.spanner = sp.elements().iter().map(|v| v.as_slice().to_vec()).collect();
                let left = plan[0].1;
                self.epoch = Some(EpochPlan { r, plan, idx: 0, left });
            }
            Err(e) => {
                let msg = format!("epoch {r}: spanner construction failed ({e}); playing the region witness");
                log::warn!("{msg}");
                record.warning = Some(msg.clone());
                self.warnings.push(msg);
                self.frozen = Some(self.policy_of(&self.region.witness)?);
                self.epoch = None;
            }
        }
        self.records.push(record);
        Ok(())
    }

    fn plan_from(&self, sp: &SpannerSet, t_r: usize) -> Result<Vec<(DfcPolicy, usize)>> {
        let d = self.spec.dim();
        sp.elements()
            .iter()
            .enumerate()
            .map(|(j, v)| Ok((self.policy_of(v)?, if j == 0 { d * t_r } else { t_r })))
            .collect()
    }

    fn policy_of(&self, v: &DVector<f64>) -> Result<DfcPolicy> {
        DfcPolicy::unflatten(self.spec.h, self.spec.dx, self.spec.du, v.as_slice())
    }

    /// Shrink the region with the epoch's estimate and the rule
    /// `C(M|Â,B̂) ≤ min C + 3ε_r`.
    fn eliminate(&mut self, t: usize) -> Result<()> {
        let r = self.epoch.as_ref().map_or(0, |e| e.r);
        let eps = EpochSchedule::epsilon(r);
        let est = self.estimate_override.clone().unwrap_or_else(|| self.ident.estimate().clone());
        let model = SurrogateModel::new(&est.a_hat, &est.b_hat, self.spec.h)?;
        let surrogate = SurrogateCost::new(model, self.cost.clone(), self.expectation(r))?;
        let objective: Arc<dyn ConvexFunction> = Arc::new(PolicyObjective::new(surrogate));
        let opts = MinimizeOptions { tol: eps / 4.0, max_iter: self.cfg.minimize_iters, ..MinimizeOptions::default() };
        let min = region_minimize(&self.region, objective.as_ref(), &opts)?;
        let margin = 3.0 * objective.stderr(&min.point)?;
        let threshold = min.value + 3.0 * eps + margin;
        let meta = ConstraintMeta { epoch: r, epsilon: eps, min_value: min.value, margin };
        self.region
            .push_constraint(SublevelConstraint { function: objective, threshold, meta }, min.point.clone())?;
        if let Some(rec) = self.records.last_mut() {
            rec.end = Some(t - 1);
            rec.a_hat = Some(to_rows(&est.a_hat));
            rec.b_hat = Some(to_rows(&est.b_hat));
            rec.region_min = Some(min.value);
            rec.threshold = Some(threshold);
            rec.minimizer = Some(min.point.as_slice().to_vec());
            if let Some(w) = &min.warning {
                rec.warning = Some(w.clone());
                self.warnings.push(format!("epoch {r}: {w}"));
            }
        }
        Ok(())
    }

    /// Policy to play at step `t`, advancing the schedule as needed.
    fn current_policy(&mut self, t: usize) -> Result<(DfcPolicy, bool)> {
        if let Some(m) = &self.frozen {
            return Ok((m.clone(), false));
        }
        if self.epoch.is_none() {
            self.start_epoch(self.cfg.first_epoch, t)?;
            if let Some(m) = &self.frozen {
                return Ok((m.clone(), true));
            }
        }
        let mut switched = false;
        loop {
            let ep = self.epoch.as_mut().expect("epoch in progress");
            if ep.left > 0 {
                ep.left -= 1;
                if switched || ep.left + 1 == ep.plan[ep.idx].1 {
                    switched = true;
                }
                return Ok((ep.plan[ep.idx].0.clone(), switched));
            }
            if ep.idx + 1 < ep.plan.len() {
                ep.idx += 1;
                ep.left = ep.plan[ep.idx].1;
                continue;
            }
            let r = ep.r;
            self.eliminate(t)?;
            self.start_epoch(r + 1, t)?;
            if let Some(m) = &self.frozen {
                return Ok((m.clone(), true));
            }
            switched = true;
        }
    }
}

impl Controller for GeometricController {
    fn name(&self) -> &str {
        "geometric"
    }

    fn act(&mut self, obs: &Observation<'_>) -> Result<DVector<f64>> {
        let x = obs.state;
        self.ident.observe(x)?;
        if let Some(u) = self.ident.warmup_control(self.info.du)? {
            if self.segments.is_empty() {
                self.segments.push(PolicySegment { start: obs.t, policy: PlayedPolicy::Exploration });
            }
            self.marker = StepMarker { epoch: 0, policy_switch: obs.t == 1 };
            self.ident.record(x, &u);
            return Ok(u);
        }
        let (m, switched) = self.current_policy(obs.t)?;
        if switched || self.segments.is_empty() {
            self.segments.push(PolicySegment { start: obs.t, policy: PlayedPolicy::Dfc(m.clone()) });
        }
        let u = m.control_history(self.ident.recent(self.spec.h));
        let epoch = self.records.last().map_or(0, |r| r.epoch);
        self.marker = StepMarker { epoch, policy_switch: switched || obs.t == 1 };
        self.ident.record(x, &u);
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
            "controller": "geometric",
            "lambda": self.ident.lambda(),
            "dim": self.spec.dim(),
            "epochs": self.records,
            "warnings": self.warnings,
        })
    }

    fn disturbance_estimates(&self) -> Option<&[DVector<f64>]> {
        Some(self.ident.disturbance_estimates())
    }
}
