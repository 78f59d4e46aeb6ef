//! Minimization of a convex objective over a region.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{ensure_dim, Error, Result};
use crate::geometry::region::{ConvexFunction, Region};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MinimizeOptions {
    /// Target accuracy of the returned value.
    pub tol: f64,
    pub max_iter: usize,
    /// Initial step lengths of the restarts, relative to the bounding radius.
    pub step_scales: Vec<f64>,
    /// Weight of the exact penalty on sublevel-constraint violations.
    pub penalty: f64,
}

impl Default for MinimizeOptions {
    fn default() -> Self {
        Self { tol: 1e-3, max_iter: 400, step_scales: vec![1.0, 0.1, 0.01], penalty: 10.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionMinimum {
    pub point: DVector<f64>,
    pub value: f64,
    /// Best value of each restart.
    pub restart_values: Vec<f64>,
    /// Set when restarts disagree by more than `10 · tol`.
    pub warning: Option<String>,
}

struct Penalized<'a> {
    region: &'a Region,
    objective: &'a dyn ConvexFunction,
    penalty: f64,
}

impl Penalized<'_> {
    /// `(objective value, penalized value, penalized subgradient, max violation)`.
    fn eval(&self, x: &DVector<f64>) -> Result<(f64, f64, DVector<f64>, f64)> {
        let (f, mut g) = self.objective.value_grad(x)?;
        let mut total = f;
        let mut worst = f64::NEG_INFINITY;
        for c in &self.region.constraints {
            let (v, cg) = c.function.value_grad(x)?;
            let viol = v - c.threshold;
            worst = worst.max(viol);
            if viol > 0.0 {
                total += self.penalty * viol;
                g.axpy(self.penalty, &cg, 1.0);
            }
        }
        Ok((f, total, g, worst))
    }
}

/// Minimize `objective` over `region`.
///
/// Each restart runs projected gradient steps on the objective plus an exact
/// penalty for the sublevel constraints, with backtracking on the step length,
/// starting from the witness. Infeasible end points are pulled back toward the
/// witness by bisection, so the returned point is always a member.
pub fn region_minimize(region: &Region, objective: &dyn ConvexFunction, opts: &MinimizeOptions) -> Result<RegionMinimum> {
    ensure_dim("objective dimension", objective.dim(), region.dim())?;
    if opts.step_scales.is_empty() {
        return Err(Error::InvalidArgument("need at least one restart".into()));
    }
    let pen = Penalized { region, objective, penalty: opts.penalty };
    let radius = region.radius();
    let witness = region.witness.clone();
    let w_val = objective.value(&witness)?;

    let mut best: (DVector<f64>, f64) = (witness.clone(), w_val);
    let mut restart_values = Vec::with_capacity(opts.step_scales.len());
    for &scale in &opts.step_scales {
        let mut x = witness.clone();
        let (mut f, mut total, mut g, mut viol) = pen.eval(&x)?;
        let mut step = scale * radius / g.norm().max(1e-12);
        let mut run_best: (DVector<f64>, f64) = (witness.clone(), w_val);
        for _ in 0..opts.max_iter {
            let mut accepted = false;
            while step * g.norm() > 1e-13 * radius {
                let y = region.base.project(&(&x - &g * step));
                let diff = &y - &x;
                let (fy, ty, gy, vy) = pen.eval(&y)?;
                if ty <= total + g.dot(&diff) + diff.norm_squared() / (2.0 * step) || ty < total - 1e-15 {
                    let moved = diff.norm();
                    x = y;
                    (f, total, g, viol) = (fy, ty, gy, vy);
                    step *= 1.5;
                    accepted = moved > 1e-12 * radius;
                    break;
                }
                step *= 0.5;
            }
            if viol <= 0.0 && f < run_best.1 {
                run_best = (x.clone(), f);
            }
            if !accepted {
                break;
            }
        }
        if viol > 0.0 {
            let p = pull_back(region, &witness, &x)?;
            let v = objective.value(&p)?;
            if v < run_best.1 {
                run_best = (p, v);
            }
        }
        restart_values.push(run_best.1);
        if run_best.1 < best.1 {
            best = run_best;
        }
    }
    let spread = restart_values.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
        - restart_values.iter().cloned().fold(f64::INFINITY, f64::min);
    let warning = (spread > 10.0 * opts.tol)
        .then(|| format!("restarts disagree by {spread:.3e} (tolerance {:.3e})", opts.tol));
    if let Some(w) = &warning {
        log::warn!("region_minimize: {w}");
    }
    Ok(RegionMinimum { point: best.0, value: best.1, restart_values, warning })
}

/// Farthest member on the segment from `inside` toward `outside`.
fn pull_back(region: &Region, inside: &DVector<f64>, outside: &DVector<f64>) -> Result<DVector<f64>> {
    let (mut lo, mut hi) = (0.0, 1.0);
    for _ in 0..50 {
        let mid = 0.5 * (lo + hi);
        let p = inside + (outside - inside) * mid;
        if region.contains(&p)? {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(inside + (outside - inside) * lo)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::region::NormBudget;

    #[derive(Debug)]
    struct SquaredDistance(DVector<f64>);

    impl ConvexFunction for SquaredDistance {
        fn dim(&self) -> usize {
            self.0.len()
        }

        fn value_grad(&self, x: &DVector<f64>) -> Result<(f64, DVector<f64>)> {
            let d = x - &self.0;
            Ok((d.norm_squared(), d * 2.0))
        }
    }

    #[test]
    fn squared_norm_minimized_at_origin() {
        let region = Region::new(NormBudget::new(vec![(2, 2); 2], 1.0).unwrap(), DVector::from_element(8, 0.1)).unwrap();
        let res = region_minimize(&region, &SquaredDistance(DVector::zeros(8)), &Default::default()).unwrap();
        assert!(res.value < 1e-8, "{}", res.value);
    }

    #[test]
    fn target_outside_lands_on_boundary() {
        let region = Region::new(NormBudget::ball(2, 1.0).unwrap(), DVector::zeros(2)).unwrap();
        let res = region_minimize(&region, &SquaredDistance(DVector::from_vec(vec![3.0, 0.0])), &Default::default())
            .unwrap();
        assert!((res.value - 4.0).abs() < 1e-6);
    }
}
