//! Control from bandit feedback: a zeroth-order optimizer proposes policies,
//! each is executed for `2H + 1` steps and the cost of the last step is
//! reported back.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::control::regret::{PlayedPolicy, PolicySegment};
use crate::control::ProblemInfo;
use crate::dfc::policy::{DfcPolicy, PolicyClassSpec};
use crate::error::{ensure_dim, Error, Result};
use crate::estimation::online::OnlineIdentifier;
use crate::estimation::ridge::{lambda_schedule, SystemEstimate};
use crate::geometry::region::NormBudget;
use crate::lds::rollout::{Controller, Observation, StepMarker};
use crate::rng::{self, StreamRng};

/// Noise model of the repeat-and-average wrapper: responses are the truth plus
/// `σ_ζ`-subgaussian noise plus an adversarial term with total square at most
/// `σ_ξ²`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RobustOracleParams {
    pub sigma_zeta: f64,
    pub sigma_xi: f64,
    /// Failure probability exponent: guarantees hold with probability `1 − n^{-c}`.
    pub c: f64,
    /// Target accuracy `γ_acc`.
    pub gamma_acc: f64,
    /// Number of oracle uses the guarantee must cover.
    pub n: usize,
}

impl RobustOracleParams {
    /// `σ = √(c + 1) · max(σ_ζ, σ_ξ)`.
    pub fn sigma(&self) -> f64 {
        (self.c + 1.0).sqrt() * self.sigma_zeta.max(self.sigma_xi)
    }

    /// `s = ceil(4 σ² / γ_acc² · ln n)`, at least 1.
    pub fn repeats(&self) -> usize {
        robust_repeats(self.sigma(), self.gamma_acc, self.n)
    }
}

pub fn robust_repeats(sigma: f64, gamma_acc: f64, n: usize) -> usize {
    let s = 4.0 * sigma * sigma / (gamma_acc * gamma_acc) * (n.max(2) as f64).ln();
    (s.ceil() as usize).max(1)
}

/// Query `query` `s` times and return the mean response.
pub fn robust_value_oracle(mut query: impl FnMut() -> f64, params: &RobustOracleParams) -> Result<f64> {
    if !(params.gamma_acc > 0.0) {
        return Err(Error::InvalidArgument("accuracy gamma_acc must be positive".into()));
    }
    let s = params.repeats();
    Ok((0..s).map(|_| query()).sum::<f64>() / s as f64)
}

/// A zeroth-order optimizer driven by value reports.
pub trait ZerothOrderOptimizer: Send {
    fn name(&self) -> &str;

    /// The point to evaluate next.
    fn query(&mut self) -> DVector<f64>;

    /// The observed value at the last queried point.
    fn report(&mut self, value: f64);

    /// Number of times the query point changed.
    fn switches(&self) -> usize;
}

/// Always queries the same point.
pub struct ConstantOptimizer {
    point: DVector<f64>,
    reports: Vec<f64>,
}

impl ConstantOptimizer {
    pub fn new(point: DVector<f64>) -> Self {
        Self { point, reports: Vec::new() }
    }

    pub fn reports(&self) -> &[f64] {
        &self.reports
    }
}

impl ZerothOrderOptimizer for ConstantOptimizer {
    fn name(&self) -> &str {
        "constant"
    }

    fn query(&mut self) -> DVector<f64> {
        self.point.clone()
    }

    fn report(&mut self, value: f64) {
        self.reports.push(value);
    }

    fn switches(&self) -> usize {
        0
    }
}

#[derive(Clone, Copy, PartialEq)]
enum Side {
    Plus,
    Minus,
}

/// Projected two-point zeroth-order descent over a norm-budget set.
///
/// Each iteration draws a random unit direction `v`, averages `repeats`
/// reports at `x + δv` and at `x − δv`, and steps along
/// `d (f₊ − f₋)/(2δ) · v` with step `η₀/√k`, projecting back onto the set.
pub struct TwoPointOptimizer {
    set: NormBudget,
    x: DVector<f64>,
    delta: f64,
    eta0: f64,
    repeats: usize,
    rng: StreamRng,
    dir: DVector<f64>,
    side: Side,
    acc: f64,
    count: usize,
    f_plus: f64,
    k: usize,
    switches: usize,
    last_query: Option<DVector<f64>>,
}

impl TwoPointOptimizer {
    pub fn new(set: NormBudget, x0: DVector<f64>, delta: f64, eta0: f64, repeats: usize, seed: u64) -> Result<Self> {
        ensure_dim("start point", x0.len(), set.dim())?;
        if !(delta > 0.0) || !(eta0 > 0.0) || repeats == 0 {
            return Err(Error::InvalidArgument("delta, eta0 and repeats must be positive".into()));
        }
        let mut rng = rng::stream(seed, &[rng::label::CONTROLLER]);
        let dir = Self::direction(&mut rng, x0.len());
        let x = set.project(&x0);
        Ok(Self {
            set,
            x,
            delta,
            eta0,
            repeats,
            rng,
            dir,
            side: Side::Plus,
            acc: 0.0,
            count: 0,
            f_plus: 0.0,
            k: 1,
            switches: 0,
            last_query: None,
        })
    }

    fn direction(rng: &mut StreamRng, d: usize) -> DVector<f64> {
        let mut v = DVector::zeros(d);
        rng::fill_standard_normal(rng, v.as_mut_slice());
        let n = v.norm();
        if n > 0.0 {
            v / n
        } else {
            let mut e = DVector::zeros(d);
            e[0] = 1.0;
            e
        }
    }

    /// Current iterate.
    pub fn point(&self) -> &DVector<f64> {
        &self.x
    }

    pub fn iterations(&self) -> usize {
        self.k - 1
    }
}

impl ZerothOrderOptimizer for TwoPointOptimizer {
    fn name(&self) -> &str {
        "two-point"
    }

    fn query(&mut self) -> DVector<f64> {
        let sign = if self.side == Side::Plus { 1.0 } else { -1.0 };
        let q = self.set.project(&(&self.x + &self.dir * (sign * self.delta)));
        if self.last_query.as_ref() != Some(&q) {
            self.switches += 1;
            self.last_query = Some(q.clone());
        }
        q
    }

    fn report(&mut self, value: f64) {
        self.acc += value;
        self.count += 1;
        if self.count < self.repeats {
            return;
        }
        let mean = self.acc / self.count as f64;
        self.acc = 0.0;
        self.count = 0;
        match self.side {
            Side::Plus => {
                self.f_plus = mean;
                self.side = Side::Minus;
            }
            Side::Minus => {
                let d = self.x.len() as f64;
                let g = &self.dir * (d * (self.f_plus - mean) / (2.0 * self.delta));
                let eta = self.eta0 / (self.k as f64).sqrt();
                self.x = self.set.project(&(&self.x - g * eta));
                self.k += 1;
                self.dir = Self::direction(&mut self.rng, self.x.len());
                self.side = Side::Plus;
            }
        }
    }

    fn switches(&self) -> usize {
        self.switches
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BanditConfig {
    pub h: usize,
    pub g: f64,
    pub lambda_scale: f64,
    pub solve_stride: usize,
}

impl Default for BanditConfig {
    fn default() -> Self {
        Self { h: 3, g: 1.0, lambda_scale: 1e-3, solve_stride: 1 }
    }
}

pub struct BanditController {
    spec: PolicyClassSpec,
    optimizer: Box<dyn ZerothOrderOptimizer>,
    ident: OnlineIdentifier,
    max_queries: usize,
    queries: usize,
    current: Option<DfcPolicy>,
    reports: Vec<(usize, f64)>,
    truncated: bool,
    segments: Vec<PolicySegment>,
    marker: StepMarker,
}

impl BanditController {
    pub fn new(
        cfg: BanditConfig,
        info: ProblemInfo,
        optimizer: Box<dyn ZerothOrderOptimizer>,
        initial: SystemEstimate,
        horizon: usize,
    ) -> Result<Self> {
        let spec = PolicyClassSpec::new(cfg.h, cfg.g, info.dx, info.du)?;
        let lambda = lambda_schedule(&spec, info.kappa, info.beta, info.gamma, cfg.lambda_scale);
        Ok(Self {
            ident: OnlineIdentifier::from_estimate(lambda, initial, cfg.solve_stride)?,
            max_queries: horizon / (2 * cfg.h + 2),
            spec,
            optimizer,
            queries: 0,
            current: None,
            reports: Vec::new(),
            truncated: false,
            segments: Vec::new(),
            marker: StepMarker::default(),
        })
    }

    fn period(&self) -> usize {
        2 * self.spec.h + 1
    }

    /// `(t, c(x_t, u_t))` for every reported step.
    pub fn reports(&self) -> &[(usize, f64)] {
        &self.reports
    }

    pub fn queries(&self) -> usize {
        self.queries
    }

    pub fn truncated(&self) -> bool {
        self.truncated
    }

    pub fn switches(&self) -> usize {
        self.optimizer.switches()
    }
}

impl Controller for BanditController {
    fn name(&self) -> &str {
        "bandit"
    }

    fn act(&mut self, obs: &Observation<'_>) -> Result<DVector<f64>> {
        let x = obs.state;
        self.ident.observe(x)?;
        let period = self.period();
        let prev_t = obs.t - 1;
        if prev_t > 0 && prev_t % period == 0 && !self.truncated {
            let c = obs.last_cost.ok_or_else(|| Error::InvalidArgument("bandit feedback missing".into()))?;
            self.optimizer.report(c);
            self.reports.push((prev_t, c));
        }
        let mut switched = false;
        if prev_t % period == 0 {
            if self.queries < self.max_queries || self.current.is_none() {
                let q = self.optimizer.query();
                let m = DfcPolicy::unflatten(self.spec.h, self.spec.dx, self.spec.du, q.as_slice())?;
                switched = self.current.as_ref() != Some(&m);
                self.current = Some(m);
                self.queries += 1;
            } else if !self.truncated {
                log::info!("bandit: query budget of {} exhausted at t={}", self.max_queries, obs.t);
                self.truncated = true;
            }
        }
        let m = self.current.as_ref().expect("query issued");
        if switched {
            self.segments.push(PolicySegment { start: obs.t, policy: PlayedPolicy::Dfc(m.clone()) });
        }
        let u = m.control_history(self.ident.recent(self.spec.h));
        self.marker = StepMarker { epoch: self.queries, policy_switch: switched };
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
            "controller": "bandit",
            "optimizer": self.optimizer.name(),
            "queries": self.queries,
            "max_queries": self.max_queries,
            "reports": self.reports.len(),
            "switches": self.optimizer.switches(),
            "truncated": self.truncated,
        })
    }

    fn disturbance_estimates(&self) -> Option<&[DVector<f64>]> {
        Some(self.ident.disturbance_estimates())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn repeat_count_formula() {
        let p = RobustOracleParams { sigma_zeta: 1.0, sigma_xi: 0.5, c: 3.0, gamma_acc: 0.5, n: 100 };
        assert_eq!(p.sigma(), 2.0);
        // 4 · 4 / 0.25 · ln 100 = 64 · 4.605… = 294.7…
        assert_eq!(p.repeats(), 295);
    }

    #[test]
    fn zero_noise_oracle_is_exact() {
        let p = RobustOracleParams { sigma_zeta: 0.1, sigma_xi: 0.0, c: 2.0, gamma_acc: 0.1, n: 10 };
        let mut calls = 0;
        let v = robust_value_oracle(
            || {
                calls += 1;
                3.25
            },
            &p,
        )
        .unwrap();
        assert_eq!(v, 3.25);
        assert_eq!(calls, p.repeats());
    }

    #[test]
    fn two_point_descends_on_a_quadratic() {
        let set = NormBudget::ball(3, 2.0).unwrap();
        let target = DVector::from_vec(vec![0.5, -0.3, 0.2]);
        let mut opt = TwoPointOptimizer::new(set, DVector::zeros(3), 0.05, 0.3, 1, 9).unwrap();
        for _ in 0..4000 {
            let q = opt.query();
            opt.report((q - &target).norm_squared());
        }
        assert!((opt.point() - &target).norm() < 0.05, "{}", opt.point());
    }
}
