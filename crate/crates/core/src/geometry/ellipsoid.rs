//! Linear optimization over a region given only its separation oracle.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{ensure_dim, Error, Result};
use crate::geometry::region::{Region, Separation};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizeOptions {
    /// Target ratio between the optimum and the returned value, both measured
    /// from the witness value.
    pub rel_accuracy: f64,
    /// Iteration cap is `c_iter · d² · ln(R / ε_ball)`.
    pub c_iter: f64,
    /// `ε_ball` relative to the bounding radius.
    pub eps_ball_rel: f64,
}

impl Default for OptimizeOptions {
    fn default() -> Self {
        Self { rel_accuracy: 1.01, c_iter: 8.0, eps_ball_rel: 1e-7 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearOptimum {
    pub point: DVector<f64>,
    pub value: f64,
    /// Upper bound on the optimum from the final ellipsoid.
    pub upper_bound: f64,
    pub iterations: usize,
    /// The accuracy target was certified before the iteration cap.
    pub certified: bool,
}

/// Maximize `⟨direction, x⟩` over `region` with a deep-cut ellipsoid method
/// started from the bounding ball.
pub fn linear_optimize(region: &Region, direction: &DVector<f64>, opts: &OptimizeOptions) -> Result<LinearOptimum> {
    let d = region.dim();
    ensure_dim("direction", direction.len(), d)?;
    if !region.contains(&region.witness)? {
        return Err(Error::EmptyRegion("stored witness is not a member".into()));
    }
    let reference = direction.dot(&region.witness);
    if direction.norm() == 0.0 {
        return Ok(LinearOptimum {
            point: region.witness.clone(),
            value: 0.0,
            upper_bound: 0.0,
            iterations: 0,
            certified: true,
        });
    }
    if d == 1 {
        return optimize_interval(region, direction[0]);
    }
    let radius = region.radius() * (1.0 + 1e-9);
    let cap = (opts.c_iter * (d * d) as f64 * (1.0 / opts.eps_ball_rel).ln()).ceil() as usize;
    let n = d as f64;

    let mut center = DVector::zeros(d);
    let mut shape = DMatrix::identity(d, d) * (radius * radius);
    let mut best = region.witness.clone();
    let mut best_val = reference;
    let mut upper = f64::INFINITY;
    let mut certified = false;
    let mut iterations = 0;

    while iterations < cap {
        let pc = &shape * direction;
        let width = direction.dot(&pc).max(0.0).sqrt();
        upper = direction.dot(&center) + width;
        if upper.max(best_val) - reference <= opts.rel_accuracy * (best_val - reference) + 1e-12 * width.max(1e-300) {
            certified = true;
            break;
        }
        iterations += 1;
        let (a, b) = match region.separate(&center)? {
            Separation::Inside => {
                let v = direction.dot(&center);
                if v > best_val {
                    best_val = v;
                    best = center.clone();
                }
                (-direction.clone(), -best_val)
            }
            Separation::Cut { normal, offset } => (normal, offset),
        };
        let pa = &shape * &a;
        let apa = a.dot(&pa);
        if !(apa > 0.0) || !apa.is_finite() {
            break;
        }
        let root = apa.sqrt();
        let alpha = ((a.dot(&center) - b) / root).max(0.0);
        if alpha >= 1.0 {
            // Nothing of the current ellipsoid survives the cut.
            certified = true;
            upper = best_val;
            break;
        }
        let tau = (1.0 + n * alpha) / (n + 1.0);
        let delta = n * n * (1.0 - alpha * alpha) / (n * n - 1.0);
        let sigma = 2.0 * (1.0 + n * alpha) / ((n + 1.0) * (1.0 + alpha));
        center.axpy(-tau / root, &pa, 1.0);
        shape.ger(-sigma / apa, &pa, &pa, 1.0);
        shape *= delta;
        shape = (&shape + shape.transpose()) * 0.5;
    }
    Ok(LinearOptimum { point: best, value: best_val, upper_bound: upper, iterations, certified })
}

fn optimize_interval(region: &Region, c: f64) -> Result<LinearOptimum> {
    let w = region.witness[0];
    let sign = c.signum();
    let (mut lo, mut hi) = (0.0, 2.0 * region.radius() + w.abs());
    let mut iterations = 0;
    while hi - lo > 1e-13 * (1.0 + hi) && iterations < 200 {
        iterations += 1;
        let mid = 0.5 * (lo + hi);
        if region.contains(&DVector::from_element(1, w + sign * mid))? {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let x = w + sign * lo;
    Ok(LinearOptimum {
        point: DVector::from_element(1, x),
        value: c * x,
        upper_bound: c * (w + sign * hi),
        iterations,
        certified: true,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::region::NormBudget;

    #[test]
    fn ball_extremum() {
        let region = Region::new(NormBudget::ball(4, 1.5).unwrap(), DVector::zeros(4)).unwrap();
        let mut c = DVector::zeros(4);
        c[0] = 1.0;
        let opt = linear_optimize(&region, &c, &OptimizeOptions::default()).unwrap();
        assert!(opt.certified);
        assert!(opt.value >= 1.5 / 1.01 && opt.value <= 1.5 + 1e-9, "{}", opt.value);
    }

    #[test]
    fn zero_direction_returns_witness() {
        let region = Region::new(NormBudget::ball(3, 1.0).unwrap(), DVector::zeros(3)).unwrap();
        let opt = linear_optimize(&region, &DVector::zeros(3), &OptimizeOptions::default()).unwrap();
        assert_eq!(opt.value, 0.0);
        assert_eq!(opt.iterations, 0);
    }

    #[test]
    fn one_dimensional_interval() {
        let region = Region::new(NormBudget::ball(1, 2.0).unwrap(), DVector::zeros(1)).unwrap();
        let opt = linear_optimize(&region, &DVector::from_element(1, -3.0), &OptimizeOptions::default()).unwrap();
        assert!((opt.point[0] + 2.0).abs() < 1e-8);
    }
}
