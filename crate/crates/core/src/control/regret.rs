//! Regret accounting against the best fixed policy of the class.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dfc::policy::{DfcPolicy, PolicyClassSpec};
use crate::dfc::surrogate::{gaussian_expected_cost, Expectation, SurrogateCost, SurrogateModel};
use crate::error::{Error, Result};
use crate::geometry::minimize::{region_minimize, MinimizeOptions};
use crate::geometry::region::{ConvexFunction, NormBudget, PolicyObjective, Region};
use crate::lds::cost::{ConvexCost, FeedbackCost};
use crate::lds::rollout::{StepMarker, Trajectory};
use crate::lds::system::LinearSystem;

/// The policy a controller was running over a stretch of time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum PlayedPolicy {
    /// `u_t = Σ M^[i-1] ŵ_{t-i}`.
    Dfc(DfcPolicy),
    /// `u_t = K x_t + Σ M^[i-1] ŵ_{t-i}`.
    Feedback { gain: DMatrix<f64>, policy: DfcPolicy },
    /// A fixed control vector (the no-dynamics case).
    Control(DVector<f64>),
    /// `u_t ~ N(0, I)`.
    Exploration,
    /// `u_t = K x_t + v_t` with `v_t` from `inner`.
    Wrapped { gain: DMatrix<f64>, inner: Box<PlayedPolicy> },
}

/// `policy` was in force from step `start` (1-based) until the next segment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicySegment {
    pub start: usize,
    pub policy: PlayedPolicy,
}

/// `J* = min_M C(M|A,B)` and its minimizer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparatorValue {
    pub policy: DfcPolicy,
    pub value: f64,
    pub stderr: f64,
    pub warning: Option<String>,
}

/// Minimize `C(·|a,b)` over the base class of `spec`.
pub fn comparator(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    cost: Arc<dyn ConvexCost>,
    spec: &PolicyClassSpec,
    expectation: Expectation,
) -> Result<ComparatorValue> {
    let model = SurrogateModel::new(a, b, spec.h)?;
    let objective = PolicyObjective::new(SurrogateCost::new(model, cost, expectation)?);
    let region = Region::new(NormBudget::new(spec.block_shapes(), spec.g)?, DVector::zeros(spec.dim()))?;
    let opts = MinimizeOptions { tol: 1e-6, max_iter: 3000, ..MinimizeOptions::default() };
    let min = region_minimize(&region, &objective, &opts)?;
    let stderr = objective.stderr(&min.point)?;
    Ok(ComparatorValue {
        policy: DfcPolicy::unflatten(spec.h, spec.dx, spec.du, min.point.as_slice())?,
        value: min.value,
        stderr,
        warning: min.warning,
    })
}

/// `Σ_{i≥0} A^i Q A^iᵀ`.
pub fn stationary_covariance(a: &DMatrix<f64>, q: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    // Doubling: P ← P + S P Sᵀ, S ← S².
    let mut p = q.clone();
    let mut s = a.clone();
    for _ in 0..64 {
        let add = &s * &p * s.transpose();
        p += &add;
        if !p.iter().all(|v| v.is_finite()) {
            break;
        }
        if add.amax() <= 1e-15 * p.amax() {
            return Ok(p);
        }
        s = &s * &s;
        if !s.iter().all(|v| v.is_finite()) {
            break;
        }
    }
    Err(Error::NonFinite("stationary covariance does not converge; A is not stable".into()))
}

/// Long-run average cost of a played policy on the true system.
pub fn policy_value(
    played: &PlayedPolicy,
    sys: &LinearSystem,
    cost: &Arc<dyn ConvexCost>,
    expectation: Expectation,
) -> Result<f64> {
    value_on(played, sys.a(), sys.b(), cost, expectation)
}

fn value_on(
    played: &PlayedPolicy,
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    cost: &Arc<dyn ConvexCost>,
    expectation: Expectation,
) -> Result<f64> {
    let (dx, du) = (b.nrows(), b.ncols());
    match played {
        PlayedPolicy::Dfc(m) => {
            let model = SurrogateModel::new(a, b, m.h())?;
            Ok(SurrogateCost::new(model, cost.clone(), expectation)?.value(m)?.value)
        }
        PlayedPolicy::Feedback { gain, policy } => {
            let ak = a + b * gain;
            let model = SurrogateModel::new(&ak, b, policy.h())?;
            let fc: Arc<dyn ConvexCost> = Arc::new(FeedbackCost::new(cost.clone(), gain.clone())?);
            Ok(SurrogateCost::new(model, fc, expectation)?.value(policy)?.value)
        }
        PlayedPolicy::Wrapped { gain, inner } => {
            let ak = a + b * gain;
            let fc: Arc<dyn ConvexCost> = Arc::new(FeedbackCost::new(cost.clone(), gain.clone())?);
            value_on(inner, &ak, b, &fc, expectation)
        }
        PlayedPolicy::Control(u) => {
            let ident = DMatrix::<f64>::identity(dx, dx);
            let mean_x = (&ident - a)
                .lu()
                .solve(&(b * u))
                .ok_or_else(|| Error::Singular("I − A".into()))?;
            let sx = stationary_covariance(a, &ident)?;
            let mut cov = DMatrix::zeros(dx + du, dx + du);
            cov.view_mut((0, 0), (dx, dx)).copy_from(&sx);
            let mean = crate::linalg::stack(&mean_x, u);
            Ok(gaussian_expected_cost(cost.as_ref(), &mean, &cov, expectation)?.0)
        }
        PlayedPolicy::Exploration => {
            let q = DMatrix::<f64>::identity(dx, dx) + b * b.transpose();
            let sx = stationary_covariance(a, &q)?;
            let mut cov = DMatrix::zeros(dx + du, dx + du);
            cov.view_mut((0, 0), (dx, dx)).copy_from(&sx);
            cov.view_mut((dx, dx), (du, du)).fill_with_identity();
            Ok(gaussian_expected_cost(cost.as_ref(), &DVector::zeros(dx + du), &cov, expectation)?.0)
        }
    }
}

/// Per-step costs and cumulative regrets of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegretLedger {
    pub j_star: f64,
    pub j_star_stderr: f64,
    /// `c(x_t, u_t)`.
    pub realized: Vec<f64>,
    /// Long-run cost of the policy in force at `t`.
    pub surrogate: Vec<f64>,
    /// `Σ_{s≤t} c_s − t·J*`.
    pub cumulative_regret: Vec<f64>,
    /// `Σ_{s≤t} C(M_s) − t·J*`.
    pub cumulative_avg_regret: Vec<f64>,
    pub markers: Vec<StepMarker>,
}

impl RegretLedger {
    pub fn horizon(&self) -> usize {
        self.realized.len()
    }

    /// `R_T` at prefix `t` (1-based).
    pub fn regret_at(&self, t: usize) -> f64 {
        self.cumulative_regret[t - 1]
    }

    pub fn avg_regret_at(&self, t: usize) -> f64 {
        self.cumulative_avg_regret[t - 1]
    }

    pub fn total_regret(&self) -> f64 {
        self.cumulative_regret.last().copied().unwrap_or(0.0)
    }

    pub fn total_avg_regret(&self) -> f64 {
        self.cumulative_avg_regret.last().copied().unwrap_or(0.0)
    }
}

/// Build the ledger of a trajectory against comparator value `j_star`.
pub fn compute_regret(
    traj: &Trajectory,
    segments: &[PolicySegment],
    sys: &LinearSystem,
    cost: &Arc<dyn ConvexCost>,
    j_star: &ComparatorValue,
    expectation: Expectation,
) -> Result<RegretLedger> {
    let n = traj.horizon();
    let mut surrogate = vec![f64::NAN; n];
    for (k, seg) in segments.iter().enumerate() {
        if seg.start == 0 || seg.start > n {
            continue;
        }
        let end = segments.get(k + 1).map_or(n, |s| (s.start - 1).min(n));
        let v = policy_value(&seg.policy, sys, cost, expectation)?;
        surrogate[seg.start - 1..end].fill(v);
    }
    // Steps before the first segment (none for the shipped controllers) are
    // charged at their realized cost.
    for (s, c) in surrogate.iter_mut().zip(&traj.costs) {
        if s.is_nan() {
            *s = *c;
        }
    }
    let mut cumulative_regret = Vec::with_capacity(n);
    let mut cumulative_avg_regret = Vec::with_capacity(n);
    let (mut r, mut ra) = (0.0, 0.0);
    for t in 0..n {
        r += traj.costs[t] - j_star.value;
        ra += surrogate[t] - j_star.value;
        cumulative_regret.push(r);
        cumulative_avg_regret.push(ra);
    }
    Ok(RegretLedger {
        j_star: j_star.value,
        j_star_stderr: j_star.stderr,
        realized: traj.costs.clone(),
        surrogate,
        cumulative_regret,
        cumulative_avg_regret,
        markers: traj.markers.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lds::cost::{CostFamily, SeparableCost};

    #[test]
    fn stationary_covariance_scalar() {
        let a = DMatrix::from_element(1, 1, 0.5);
        let p = stationary_covariance(&a, &DMatrix::identity(1, 1)).unwrap();
        assert!((p[(0, 0)] - 1.0 / 0.75).abs() < 1e-12);
        assert!(stationary_covariance(&DMatrix::from_element(1, 1, 1.5), &DMatrix::identity(1, 1)).is_err());
    }

    #[test]
    fn comparator_of_centered_cost_is_zero_policy() {
        let sys = LinearSystem::new(DMatrix::from_element(1, 1, 0.5), DMatrix::identity(1, 1), 1.0, 0.5, 1.0).unwrap();
        let cost: Arc<dyn ConvexCost> =
            Arc::new(SeparableCost::uniform(CostFamily::QuadraticClipped { radius: 10.0 }, 1, 1).unwrap());
        let spec = PolicyClassSpec::new(2, 1.0, 1, 1).unwrap();
        let c = comparator(sys.a(), sys.b(), cost.clone(), &spec, Expectation::Quadrature).unwrap();
        // With quadratic cost the best policy cancels part of the disturbance
        // and beats the zero policy.
        let zero = policy_value(&PlayedPolicy::Dfc(spec.zero_policy()), &sys, &cost, Expectation::Quadrature).unwrap();
        assert!(c.value < zero);
        assert!(c.policy.norm_budget() <= 1.0 + 1e-9);
    }
}
