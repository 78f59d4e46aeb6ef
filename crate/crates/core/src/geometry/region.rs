use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dfc::policy::DfcPolicy;
use crate::dfc::surrogate::SurrogateCost;
use crate::error::{ensure_dim, Error, Result};

const MEMBERSHIP_TOL: f64 = 1e-9;

/// A convex function on `R^d` with subgradient access.
pub trait ConvexFunction: Send + Sync + fmt::Debug {
    fn dim(&self) -> usize;

    fn value(&self, x: &DVector<f64>) -> Result<f64> {
        Ok(self.value_grad(x)?.0)
    }

    fn value_grad(&self, x: &DVector<f64>) -> Result<(f64, DVector<f64>)>;

    /// Sampling error of `value`, zero for exact evaluations.
    fn stderr(&self, _x: &DVector<f64>) -> Result<f64> {
        Ok(0.0)
    }
}

/// `⟨c, x⟩ + offset`.
#[derive(Debug, Clone)]
pub struct LinearFunction {
    pub c: DVector<f64>,
    pub offset: f64,
}

impl ConvexFunction for LinearFunction {
    fn dim(&self) -> usize {
        self.c.len()
    }

    fn value_grad(&self, x: &DVector<f64>) -> Result<(f64, DVector<f64>)> {
        ensure_dim("point", x.len(), self.c.len())?;
        Ok((self.c.dot(x) + self.offset, self.c.clone()))
    }
}

/// The surrogate cost `C(·|Â,B̂)` as a function of the flattened policy.
#[derive(Debug, Clone)]
pub struct PolicyObjective {
    pub surrogate: SurrogateCost,
}

impl PolicyObjective {
    pub fn new(surrogate: SurrogateCost) -> Self {
        Self { surrogate }
    }

    fn policy(&self, x: &DVector<f64>) -> Result<DfcPolicy> {
        let m = self.surrogate.model();
        DfcPolicy::unflatten(m.h(), m.dx(), m.du(), x.as_slice())
    }
}

impl ConvexFunction for PolicyObjective {
    fn dim(&self) -> usize {
        let m = self.surrogate.model();
        m.h() * m.dx() * m.du()
    }

    fn value(&self, x: &DVector<f64>) -> Result<f64> {
        Ok(self.surrogate.value(&self.policy(x)?)?.value)
    }

    fn value_grad(&self, x: &DVector<f64>) -> Result<(f64, DVector<f64>)> {
        let v = self.surrogate.value_grad(&self.policy(x)?)?;
        let g = v.grad.expect("gradient requested").flatten();
        Ok((v.value, g))
    }

    fn stderr(&self, x: &DVector<f64>) -> Result<f64> {
        Ok(self.surrogate.value(&self.policy(x)?)?.stderr)
    }
}

/// `Σ_i ‖X_i‖ ≤ budget` over matrix blocks `X_i` (spectral norms), stored
/// row-major and concatenated. A single `1 × n` block is a Euclidean ball.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormBudget {
    pub shapes: Vec<(usize, usize)>,
    pub budget: f64,
}

impl NormBudget {
    pub fn new(shapes: Vec<(usize, usize)>, budget: f64) -> Result<Self> {
        if shapes.is_empty() || shapes.iter().any(|&(r, c)| r == 0 || c == 0) {
            return Err(Error::InvalidArgument("norm budget needs nonempty blocks".into()));
        }
        if !(budget > 0.0) {
            return Err(Error::InvalidArgument(format!("budget must be positive, got {budget}")));
        }
        Ok(Self { shapes, budget })
    }

    pub fn ball(dim: usize, radius: f64) -> Result<Self> {
        Self::new(vec![(1, dim)], radius)
    }

    pub fn dim(&self) -> usize {
        self.shapes.iter().map(|(r, c)| r * c).sum()
    }

    /// Radius of a Euclidean ball around the origin containing the set.
    pub fn radius(&self) -> f64 {
        let rank = self.shapes.iter().map(|&(r, c)| r.min(c)).max().unwrap_or(1);
        (rank as f64).sqrt() * self.budget
    }

    fn blocks(&self, x: &DVector<f64>) -> Vec<DMatrix<f64>> {
        let mut off = 0;
        self.shapes
            .iter()
            .map(|&(r, c)| {
                let b = DMatrix::from_row_slice(r, c, &x.as_slice()[off..off + r * c]);
                off += r * c;
                b
            })
            .collect()
    }

    fn assemble(&self, blocks: &[DMatrix<f64>]) -> DVector<f64> {
        let mut v = Vec::with_capacity(self.dim());
        for b in blocks {
            v.extend(crate::linalg::to_row_major(b));
        }
        DVector::from_vec(v)
    }

    /// `Σ_i ‖X_i‖`.
    pub fn value(&self, x: &DVector<f64>) -> f64 {
        self.blocks(x).iter().map(crate::linalg::spectral_norm).sum()
    }

    /// A subgradient `Σ_i u_i v_iᵀ` of the block-norm sum.
    pub fn subgradient(&self, x: &DVector<f64>) -> DVector<f64> {
        let grads: Vec<DMatrix<f64>> = self
            .blocks(x)
            .into_iter()
            .map(|b| {
                let (r, c) = b.shape();
                let svd = b.svd(true, true);
                let k = svd.singular_values.imax();
                if svd.singular_values[k] == 0.0 {
                    return DMatrix::zeros(r, c);
                }
                let u = svd.u.expect("u requested").column(k).into_owned();
                let vt = svd.v_t.expect("v_t requested").row(k).into_owned();
                u * vt
            })
            .collect();
        self.assemble(&grads)
    }

    pub fn contains(&self, x: &DVector<f64>) -> bool {
        self.value(x) <= self.budget * (1.0 + MEMBERSHIP_TOL)
    }

    /// Euclidean projection: per-block singular values are clipped at levels
    /// `τ_i(μ)` with `Σ_j (s_ij − τ_i)_+ = μ`, and `μ` is found by bisection so
    /// that `Σ_i τ_i = budget`.
    pub fn project(&self, x: &DVector<f64>) -> DVector<f64> {
        if self.contains(x) {
            return x.clone();
        }
        let svds: Vec<_> = self.blocks(x).into_iter().map(|b| b.svd(true, true)).collect();
        let sv: Vec<Vec<f64>> = svds.iter().map(|s| s.singular_values.iter().copied().collect()).collect();
        let total: f64 = sv.iter().flatten().sum();
        let levels_at = |mu: f64| -> Vec<f64> { sv.iter().map(|s| clip_level(s, mu)).collect() };
        let (mut lo, mut hi) = (0.0, total);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if levels_at(mid).iter().sum::<f64>() > self.budget {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo <= 1e-15 * total.max(1.0) {
                break;
            }
        }
        let levels = levels_at(hi);
        let blocks: Vec<DMatrix<f64>> = svds
            .into_iter()
            .zip(levels)
            .map(|(mut svd, tau)| {
                for s in svd.singular_values.iter_mut() {
                    *s = s.min(tau);
                }
                svd.recompose().expect("vectors computed")
            })
            .collect();
        self.assemble(&blocks)
    }
}

/// The level `τ ≥ 0` with `Σ_j (s_j − τ)_+ = mu`, or 0 if `Σ s_j ≤ mu`.
fn clip_level(s: &[f64], mu: f64) -> f64 {
    let mut sorted = s.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut acc = 0.0;
    for k in 0..sorted.len() {
        acc += sorted[k];
        let tau = (acc - mu) / (k + 1) as f64;
        let next = sorted.get(k + 1).copied().unwrap_or(0.0);
        if tau >= next {
            return tau.max(0.0);
        }
    }
    0.0
}

/// Provenance of a sublevel constraint.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ConstraintMeta {
    pub epoch: usize,
    pub epsilon: f64,
    /// Minimum of the function over the previous region.
    pub min_value: f64,
    /// Slack added to the threshold for sampling error.
    pub margin: f64,
}

/// `{x : f(x) ≤ threshold}` for a frozen function `f`.
#[derive(Debug, Clone)]
pub struct SublevelConstraint {
    pub function: Arc<dyn ConvexFunction>,
    pub threshold: f64,
    pub meta: ConstraintMeta,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Separation {
    Inside,
    /// `⟨normal, point⟩ > offset ≥ ⟨normal, y⟩` for every member `y`.
    Cut { normal: DVector<f64>, offset: f64 },
}

/// Base norm-budget set intersected with sublevel constraints, plus one known
/// member (the witness).
#[derive(Debug, Clone)]
pub struct Region {
    pub base: NormBudget,
    pub constraints: Vec<SublevelConstraint>,
    pub witness: DVector<f64>,
}

impl Region {
    pub fn new(base: NormBudget, witness: DVector<f64>) -> Result<Self> {
        ensure_dim("witness", witness.len(), base.dim())?;
        if !base.contains(&witness) {
            return Err(Error::EmptyRegion("witness violates the norm budget".into()));
        }
        Ok(Self { base, constraints: Vec::new(), witness })
    }

    pub fn dim(&self) -> usize {
        self.base.dim()
    }

    pub fn radius(&self) -> f64 {
        self.base.radius()
    }

    /// Add a constraint and move the witness; the new witness must satisfy
    /// every constraint.
    pub fn push_constraint(&mut self, c: SublevelConstraint, witness: DVector<f64>) -> Result<()> {
        ensure_dim("constraint dimension", c.function.dim(), self.dim())?;
        self.constraints.push(c);
        if !self.contains(&witness)? {
            self.constraints.pop();
            return Err(Error::EmptyRegion("new witness violates the region".into()));
        }
        self.witness = witness;
        Ok(())
    }

    pub fn contains(&self, x: &DVector<f64>) -> Result<bool> {
        Ok(matches!(self.separate(x)?, Separation::Inside))
    }

    /// Largest constraint violation `max_j f_j(x) − θ_j` (negative inside).
    pub fn constraint_violation(&self, x: &DVector<f64>) -> Result<f64> {
        let mut worst = f64::NEG_INFINITY;
        for c in &self.constraints {
            worst = worst.max(c.function.value(x)? - c.threshold);
        }
        Ok(worst)
    }

    pub fn separate(&self, x: &DVector<f64>) -> Result<Separation> {
        ensure_dim("point", x.len(), self.dim())?;
        if !x.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("query point".into()));
        }
        let norm_sum = self.base.value(x);
        if norm_sum > self.base.budget * (1.0 + MEMBERSHIP_TOL) {
            return Ok(Separation::Cut { normal: self.base.subgradient(x), offset: self.base.budget });
        }
        for c in self.constraints.iter().rev() {
            let (v, g) = c.function.value_grad(x)?;
            if v > c.threshold + MEMBERSHIP_TOL * (1.0 + c.threshold.abs()) {
                let offset = c.threshold - v + g.dot(x);
                return Ok(Separation::Cut { normal: g, offset });
            }
        }
        Ok(Separation::Inside)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn projection_of_ball_scales_radially() {
        let nb = NormBudget::ball(3, 2.0).unwrap();
        let x = DVector::from_vec(vec![3.0, 4.0, 0.0]);
        let p = nb.project(&x);
        assert!((p - x * 0.4).norm() < 1e-12);
    }

    #[test]
    fn projection_is_feasible_and_idempotent() {
        let nb = NormBudget::new(vec![(2, 2); 3], 1.5).unwrap();
        let mut r = crate::rng::stream(2, &[]);
        for _ in 0..20 {
            let x = DVector::from_fn(12, |_, _| 2.0 * crate::rng::standard_normal(&mut r));
            let p = nb.project(&x);
            assert!(nb.value(&p) <= 1.5 * (1.0 + 1e-9));
            assert!((nb.project(&p) - &p).norm() < 1e-9);
            // Variational inequality against random members.
            for _ in 0..5 {
                let y = nb.project(&DVector::from_fn(12, |_, _| crate::rng::standard_normal(&mut r)));
                assert!((&x - &p).dot(&(&y - &p)) <= 1e-7);
            }
        }
    }

    #[test]
    fn origin_is_inside_and_double_budget_is_cut() {
        let nb = NormBudget::new(vec![(1, 2); 2], 1.0).unwrap();
        let region = Region::new(nb, DVector::zeros(4)).unwrap();
        assert!(region.contains(&DVector::zeros(4)).unwrap());
        let x = DVector::from_vec(vec![1.0, 0.0, 0.0, 1.0]);
        match region.separate(&x).unwrap() {
            Separation::Cut { normal, offset } => assert!(normal.dot(&x) > offset),
            Separation::Inside => panic!("expected a cut"),
        }
    }
}
