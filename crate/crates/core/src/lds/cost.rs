//! Convex per-step costs `c(x, u)`.

use std::sync::{Arc, OnceLock};

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{ensure_dim, Error, Result};
use crate::linalg::spectral_norm;

/// A convex, Lipschitz cost on state/control pairs with subgradient access.
pub trait ConvexCost: Send + Sync + std::fmt::Debug {
    fn dx(&self) -> usize;
    fn du(&self) -> usize;
    fn value(&self, x: &[f64], u: &[f64]) -> f64;
    /// Value, with a subgradient written into `gx` and `gu`.
    fn value_grad(&self, x: &[f64], u: &[f64], gx: &mut [f64], gu: &mut [f64]) -> f64;
    fn lipschitz(&self) -> f64;
    /// If the cost is coordinate-separable after a linear map of `z = (x, u)`,
    /// Gaussian expectations can be computed by one-dimensional quadrature.
    fn gaussian_form(&self) -> Option<GaussianForm> {
        None
    }
}

/// `c(z) = s(P z)` with `s` separable; `transform = None` means `P = I`.
#[derive(Debug, Clone)]
pub struct GaussianForm {
    pub transform: Option<DMatrix<f64>>,
    pub separable: SeparableCost,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case", deny_unknown_fields)]
pub enum CostFamily {
    /// `√(v² + δ²) − δ`.
    SmoothedL1 { delta: f64 },
    /// `v²/(2δ)` for `|v| ≤ δ`, `|v| − δ/2` beyond.
    Huber { delta: f64 },
    /// `v²/2` for `|v| ≤ R`, continued linearly with slope `R`.
    QuadraticClipped { radius: f64 },
    /// `v`.
    Linear,
}

impl CostFamily {
    fn validate(&self) -> Result<()> {
        let ok = match *self {
            CostFamily::SmoothedL1 { delta } | CostFamily::Huber { delta } => delta > 0.0,
            CostFamily::QuadraticClipped { radius } => radius > 0.0,
            CostFamily::Linear => true,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("cost parameter must be positive: {self:?}")))
        }
    }

    #[inline]
    pub fn phi(&self, v: f64) -> f64 {
        match *self {
            CostFamily::SmoothedL1 { delta } => (v * v + delta * delta).sqrt() - delta,
            CostFamily::Huber { delta } => {
                if v.abs() <= delta {
                    v * v / (2.0 * delta)
                } else {
                    v.abs() - delta / 2.0
                }
            }
            CostFamily::QuadraticClipped { radius } => {
                if v.abs() <= radius {
                    0.5 * v * v
                } else {
                    radius * v.abs() - 0.5 * radius * radius
                }
            }
            CostFamily::Linear => v,
        }
    }

    #[inline]
    pub fn dphi(&self, v: f64) -> f64 {
        match *self {
            CostFamily::SmoothedL1 { delta } => v / (v * v + delta * delta).sqrt(),
            CostFamily::Huber { delta } => (v / delta).clamp(-1.0, 1.0),
            CostFamily::QuadraticClipped { radius } => v.clamp(-radius, radius),
            CostFamily::Linear => 1.0,
        }
    }

    fn d2phi(&self, v: f64) -> f64 {
        match *self {
            CostFamily::SmoothedL1 { delta } => delta * delta / (v * v + delta * delta).powf(1.5),
            CostFamily::Huber { delta } => {
                if v.abs() <= delta {
                    1.0 / delta
                } else {
                    0.0
                }
            }
            CostFamily::QuadraticClipped { radius } => {
                if v.abs() <= radius {
                    1.0
                } else {
                    0.0
                }
            }
            CostFamily::Linear => 0.0,
        }
    }

    pub fn lipschitz(&self) -> f64 {
        match *self {
            CostFamily::QuadraticClipped { radius } => radius,
            _ => 1.0,
        }
    }

    /// Points where the second derivative changes character.
    fn breakpoints(&self) -> [f64; 2] {
        match *self {
            CostFamily::SmoothedL1 { delta } | CostFamily::Huber { delta } => [-delta, delta],
            CostFamily::QuadraticClipped { radius } => [-radius, radius],
            CostFamily::Linear => [0.0, 0.0],
        }
    }
}

/// `c(x, u) = Σ_i w_i φ(z_i − a_i)` over the stacked `z = (x, u)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeparableCost {
    pub family: CostFamily,
    pub dx: usize,
    pub du: usize,
    pub weights: Vec<f64>,
    pub targets: Vec<f64>,
}

impl SeparableCost {
    pub fn new(family: CostFamily, dx: usize, du: usize, weights: Vec<f64>, targets: Vec<f64>) -> Result<Self> {
        family.validate()?;
        ensure_dim("cost weights", weights.len(), dx + du)?;
        ensure_dim("cost targets", targets.len(), dx + du)?;
        if weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) || targets.iter().any(|a| !a.is_finite()) {
            return Err(Error::InvalidArgument("cost weights must be finite and nonnegative".into()));
        }
        Ok(Self { family, dx, du, weights, targets })
    }

    /// Unit weights, zero targets.
    pub fn uniform(family: CostFamily, dx: usize, du: usize) -> Result<Self> {
        Self::new(family, dx, du, vec![1.0; dx + du], vec![0.0; dx + du])
    }

    pub fn zero(dx: usize, du: usize) -> Self {
        Self {
            family: CostFamily::Linear,
            dx,
            du,
            weights: vec![0.0; dx + du],
            targets: vec![0.0; dx + du],
        }
    }

    pub fn with_targets(mut self, targets: Vec<f64>) -> Result<Self> {
        ensure_dim("cost targets", targets.len(), self.dx + self.du)?;
        self.targets = targets;
        Ok(self)
    }

    #[inline]
    fn coord(&self, i: usize, x: &[f64], u: &[f64]) -> f64 {
        if i < self.dx {
            x[i]
        } else {
            u[i - self.dx]
        }
    }

    /// Σ_i w_i E φ(μ_i + σ_i ξ − a_i) for independent-coordinate Gaussian
    /// marginals. Writes `w_i E φ'` into `dmean` and `w_i E[φ' ξ]/σ_i` into
    /// `curvature` (the limit `w_i φ''(μ_i − a_i)` when `σ_i = 0`).
    pub fn gaussian_terms(&self, mean: &[f64], sigma: &[f64], dmean: &mut [f64], curvature: &mut [f64]) -> f64 {
        let mut total = 0.0;
        for i in 0..self.weights.len() {
            let w = self.weights[i];
            if w == 0.0 {
                dmean[i] = 0.0;
                curvature[i] = 0.0;
                continue;
            }
            let (v, dm, curv) = gaussian_moments(&self.family, mean[i] - self.targets[i], sigma[i]);
            total += w * v;
            dmean[i] = w * dm;
            curvature[i] = w * curv;
        }
        total
    }
}

impl ConvexCost for SeparableCost {
    fn dx(&self) -> usize {
        self.dx
    }

    fn du(&self) -> usize {
        self.du
    }

    fn value(&self, x: &[f64], u: &[f64]) -> f64 {
        (0..self.weights.len())
            .map(|i| self.weights[i] * self.family.phi(self.coord(i, x, u) - self.targets[i]))
            .sum()
    }

    fn value_grad(&self, x: &[f64], u: &[f64], gx: &mut [f64], gu: &mut [f64]) -> f64 {
        let mut total = 0.0;
        for i in 0..self.weights.len() {
            let v = self.coord(i, x, u) - self.targets[i];
            let w = self.weights[i];
            total += w * self.family.phi(v);
            let g = w * self.family.dphi(v);
            if i < self.dx {
                gx[i] = g;
            } else {
                gu[i - self.dx] = g;
            }
        }
        total
    }

    fn lipschitz(&self) -> f64 {
        self.family.lipschitz() * self.weights.iter().map(|w| w * w).sum::<f64>().sqrt()
    }

    fn gaussian_form(&self) -> Option<GaussianForm> {
        Some(GaussianForm { transform: None, separable: self.clone() })
    }
}

/// `c(x, K x + v)`: the cost seen by a controller whose own output `v` is
/// added to a fixed linear feedback `K x`.
#[derive(Debug, Clone)]
pub struct FeedbackCost {
    inner: Arc<dyn ConvexCost>,
    k: DMatrix<f64>,
    form: Option<GaussianForm>,
}

impl FeedbackCost {
    pub fn new(inner: Arc<dyn ConvexCost>, k: DMatrix<f64>) -> Result<Self> {
        ensure_dim("feedback gain rows", k.nrows(), inner.du())?;
        ensure_dim("feedback gain columns", k.ncols(), inner.dx())?;
        let (dx, du) = (inner.dx(), inner.du());
        let mut p = DMatrix::identity(dx + du, dx + du);
        p.view_mut((dx, 0), (du, dx)).copy_from(&k);
        let form = inner.gaussian_form().map(|f| GaussianForm {
            transform: Some(match f.transform {
                Some(t) => t * &p,
                None => p,
            }),
            separable: f.separable,
        });
        Ok(Self { inner, k, form })
    }

    pub fn gain(&self) -> &DMatrix<f64> {
        &self.k
    }

    fn total_control(&self, x: &[f64], v: &[f64]) -> Vec<f64> {
        (0..self.k.nrows())
            .map(|i| v[i] + (0..x.len()).map(|j| self.k[(i, j)] * x[j]).sum::<f64>())
            .collect()
    }
}

impl ConvexCost for FeedbackCost {
    fn dx(&self) -> usize {
        self.inner.dx()
    }

    fn du(&self) -> usize {
        self.inner.du()
    }

    fn value(&self, x: &[f64], v: &[f64]) -> f64 {
        self.inner.value(x, &self.total_control(x, v))
    }

    fn value_grad(&self, x: &[f64], v: &[f64], gx: &mut [f64], gu: &mut [f64]) -> f64 {
        let u = self.total_control(x, v);
        let val = self.inner.value_grad(x, &u, gx, gu);
        for j in 0..gx.len() {
            gx[j] += (0..gu.len()).map(|i| self.k[(i, j)] * gu[i]).sum::<f64>();
        }
        val
    }

    fn lipschitz(&self) -> f64 {
        self.inner.lipschitz() * (1.0 + spectral_norm(&self.k))
    }

    fn gaussian_form(&self) -> Option<GaussianForm> {
        self.form.clone()
    }
}

const GAUSS_LEGENDRE_POINTS: usize = 10;
const TAIL: f64 = 8.5;
const PANELS: usize = 12;

/// Gauss–Legendre nodes and weights on `[-1, 1]` (Golub–Welsch).
fn gauss_legendre() -> &'static (Vec<f64>, Vec<f64>) {
    static RULE: OnceLock<(Vec<f64>, Vec<f64>)> = OnceLock::new();
    RULE.get_or_init(|| {
        let n = GAUSS_LEGENDRE_POINTS;
        let jacobi = DMatrix::from_fn(n, n, |i, j| {
            if i + 1 == j || j + 1 == i {
                let k = i.max(j) as f64;
                k / (4.0 * k * k - 1.0).sqrt()
            } else {
                0.0
            }
        });
        let eig = SymmetricEigen::new(jacobi);
        let mut pairs: Vec<(f64, f64)> = (0..n)
            .map(|k| (eig.eigenvalues[k], 2.0 * eig.eigenvectors[(0, k)].powi(2)))
            .collect();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        pairs.into_iter().unzip()
    })
}

/// `(E φ(μ+σξ), E φ'(μ+σξ), E[φ'(μ+σξ) ξ]/σ)` for `ξ ~ N(0,1)`.
fn gaussian_moments(family: &CostFamily, mu: f64, sigma: f64) -> (f64, f64, f64) {
    if let CostFamily::Linear = family {
        return (mu, 1.0, 0.0);
    }
    if sigma < 1e-9 {
        return (family.phi(mu), family.dphi(mu), family.d2phi(mu));
    }
    let (nodes, weights) = gauss_legendre();
    let mut cuts: Vec<f64> = (0..=PANELS).map(|k| -TAIL + 2.0 * TAIL * k as f64 / PANELS as f64).collect();
    for b in family.breakpoints() {
        let s = (b - mu) / sigma;
        if s > -TAIL && s < TAIL {
            cuts.push(s);
        }
    }
    cuts.sort_by(f64::total_cmp);
    let norm = 1.0 / (2.0 * std::f64::consts::PI).sqrt();
    let (mut v, mut dm, mut ds) = (0.0, 0.0, 0.0);
    for w in cuts.windows(2) {
        let (lo, hi) = (w[0], w[1]);
        if hi - lo < 1e-14 {
            continue;
        }
        let half = 0.5 * (hi - lo);
        let mid = 0.5 * (hi + lo);
        for (node, weight) in nodes.iter().zip(weights) {
            let s = mid + half * node;
            let dens = weight * half * norm * (-0.5 * s * s).exp();
            let arg = mu + sigma * s;
            let d = family.dphi(arg);
            v += dens * family.phi(arg);
            dm += dens * d;
            ds += dens * d * s;
        }
    }
    (v, dm, ds / sigma)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    #[test]
    fn legendre_rule_integrates_polynomials() {
        let (x, w) = gauss_legendre();
        let s: f64 = w.iter().sum();
        assert!((s - 2.0).abs() < 1e-13);
        let m4: f64 = x.iter().zip(w).map(|(x, w)| w * x.powi(4)).sum();
        assert!((m4 - 0.4).abs() < 1e-13);
    }

    #[test]
    fn quadrature_matches_closed_form_for_clipped_quadratic() {
        // Large radius: E (μ+σξ)²/2 = (μ² + σ²)/2.
        let fam = CostFamily::QuadraticClipped { radius: 100.0 };
        let (v, dm, curv) = gaussian_moments(&fam, 0.7, 1.3);
        assert!((v - 0.5 * (0.49 + 1.69)).abs() < 1e-10);
        assert!((dm - 0.7).abs() < 1e-10);
        assert!((curv - 1.0).abs() < 1e-10);
    }

    #[test]
    fn quadrature_matches_monte_carlo() {
        let fam = CostFamily::Huber { delta: 0.5 };
        let (v, _, _) = gaussian_moments(&fam, 0.3, 0.8);
        let mut r = rng::stream(1, &[]);
        let n = 200_000;
        let mc: f64 = (0..n).map(|_| fam.phi(0.3 + 0.8 * rng::standard_normal(&mut r))).sum::<f64>() / n as f64;
        assert!((v - mc).abs() < 5e-3, "{v} vs {mc}");
    }

    #[test]
    fn zero_sigma_limit_is_continuous() {
        let fam = CostFamily::SmoothedL1 { delta: 1.0 };
        let (v0, d0, c0) = gaussian_moments(&fam, 0.4, 0.0);
        let (v1, d1, c1) = gaussian_moments(&fam, 0.4, 1e-4);
        assert!((v0 - v1).abs() < 1e-7);
        assert!((d0 - d1).abs() < 1e-6);
        assert!((c0 - c1).abs() < 1e-4);
    }

    #[test]
    fn feedback_cost_gradient_matches_finite_difference() {
        let inner: Arc<dyn ConvexCost> = Arc::new(
            SeparableCost::uniform(CostFamily::SmoothedL1 { delta: 0.5 }, 2, 1)
                .unwrap()
                .with_targets(vec![0.1, -0.2, 0.3])
                .unwrap(),
        );
        let k = DMatrix::from_row_slice(1, 2, &[0.4, -0.7]);
        let c = FeedbackCost::new(inner, k).unwrap();
        let (x, v) = ([0.3, -1.1], [0.25]);
        let (mut gx, mut gu) = ([0.0; 2], [0.0; 1]);
        c.value_grad(&x, &v, &mut gx, &mut gu);
        let h = 1e-6;
        for j in 0..2 {
            let (mut xp, mut xm) = (x, x);
            xp[j] += h;
            xm[j] -= h;
            let fd = (c.value(&xp, &v) - c.value(&xm, &v)) / (2.0 * h);
            assert!((fd - gx[j]).abs() < 1e-6);
        }
        let fd = (c.value(&x, &[v[0] + h]) - c.value(&x, &[v[0] - h])) / (2.0 * h);
        assert!((fd - gu[0]).abs() < 1e-6);
    }
}
