//! Unrolled coefficients `Ψ_i`, the affine map `η ↦ z(M|η)` and the surrogate
//! cost `C(M|A,B) = E c(z(M|η))`.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dfc::policy::DfcPolicy;
use crate::error::{ensure_dim, Error, Result};
use crate::lds::cost::{ConvexCost, GaussianForm};
use crate::linalg::{powers, psd_sqrt};
use crate::rng;

/// Powers of `A` and products `A^j B` shared by every policy evaluated
/// against the same `(A, B)`.
#[derive(Debug, Clone)]
pub struct SurrogateModel {
    h: usize,
    dx: usize,
    du: usize,
    a_pows: Vec<DMatrix<f64>>,
    a_pow_b: Vec<DMatrix<f64>>,
}

impl SurrogateModel {
    pub fn new(a: &DMatrix<f64>, b: &DMatrix<f64>, h: usize) -> Result<Self> {
        if !a.is_square() {
            return Err(Error::Dimension("A must be square".into()));
        }
        ensure_dim("rows of B", b.nrows(), a.nrows())?;
        if h == 0 {
            return Err(Error::InvalidArgument("memory H must be positive".into()));
        }
        let a_pows = powers(a, h + 1);
        let a_pow_b = a_pows[..=h].iter().map(|p| p * b).collect();
        Ok(Self { h, dx: a.nrows(), du: b.ncols(), a_pows, a_pow_b })
    }

    pub fn h(&self) -> usize {
        self.h
    }

    pub fn dx(&self) -> usize {
        self.dx
    }

    pub fn du(&self) -> usize {
        self.du
    }

    /// `A^{H+1}`, the coefficient of the state `H+1` steps back.
    pub fn a_pow_top(&self) -> &DMatrix<f64> {
        &self.a_pows[self.h + 1]
    }

    fn check(&self, m: &DfcPolicy) -> Result<()> {
        ensure_dim("policy memory", m.h(), self.h)?;
        ensure_dim("policy state dimension", m.dx(), self.dx)?;
        ensure_dim("policy control dimension", m.du(), self.du)
    }

    /// `Ψ_0, ..., Ψ_{2H}` with
    /// `Ψ_i = A^i 1{i ≤ H} + Σ_{j=0}^{H} A^j B M^[i-j-1] 1{1 ≤ i-j ≤ H}`.
    pub fn psi(&self, m: &DfcPolicy) -> Result<Vec<DMatrix<f64>>> {
        self.check(m)?;
        let h = self.h;
        let mut psi = Vec::with_capacity(2 * h + 1);
        for i in 0..=2 * h {
            let mut p = if i <= h { self.a_pows[i].clone() } else { DMatrix::zeros(self.dx, self.dx) };
            for j in 0..=h {
                if i > j && i - j <= h {
                    p.gemm(1.0, &self.a_pow_b[j], m.block(i - j - 1), 1.0);
                }
            }
            psi.push(p);
        }
        Ok(psi)
    }

    /// `T(M) = [Ψ_0 … Ψ_{2H}; M^[0] … M^[H-1] 0 … 0]`, so that `z = T(M) η`.
    pub fn transform(&self, m: &DfcPolicy) -> Result<DMatrix<f64>> {
        let psi = self.psi(m)?;
        let (dx, du, h) = (self.dx, self.du, self.h);
        let mut t = DMatrix::zeros(dx + du, (2 * h + 1) * dx);
        for (i, p) in psi.iter().enumerate() {
            t.view_mut((0, i * dx), (dx, dx)).copy_from(p);
        }
        for i in 0..h {
            t.view_mut((dx, i * dx), (du, dx)).copy_from(m.block(i));
        }
        Ok(t)
    }

    /// `(x(M|η), u(M|η))` for a window `η_0 … η_{2H}`.
    pub fn pair(&self, m: &DfcPolicy, eta: &[DVector<f64>]) -> Result<(DVector<f64>, DVector<f64>)> {
        ensure_dim("disturbance window", eta.len(), 2 * self.h + 1)?;
        for e in eta {
            ensure_dim("disturbance", e.len(), self.dx)?;
        }
        let psi = self.psi(m)?;
        let mut x = DVector::zeros(self.dx);
        for (p, e) in psi.iter().zip(eta) {
            x.gemv(1.0, p, e, 1.0);
        }
        Ok((x, m.control(eta)))
    }

    /// Pull a gradient `∂f/∂T` back to `∂f/∂M` through the affine map `M ↦ T(M)`.
    pub fn pullback(&self, g: &DMatrix<f64>) -> Result<DfcPolicy> {
        let (dx, du, h) = (self.dx, self.du, self.h);
        if g.shape() != (dx + du, (2 * h + 1) * dx) {
            return Err(Error::Dimension(format!("gradient of T has shape {:?}", g.shape())));
        }
        let mut out = DfcPolicy::zeros(h, dx, du);
        for k in 0..h {
            let mut blk = g.view((dx, k * dx), (du, dx)).into_owned();
            for j in 0..=h {
                let i = j + k + 1;
                blk.gemm_tr(1.0, &self.a_pow_b[j], &g.view((0, i * dx), (dx, dx)), 1.0);
            }
            *out.block_mut(k) = blk;
        }
        Ok(out)
    }
}

/// `Σ(M) = T(M) T(M)ᵀ`, the covariance of `z(M|η)` for standard normal `η`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyCovariance {
    pub sigma: DMatrix<f64>,
    pub t_matrix: DMatrix<f64>,
}

pub fn policy_covariance(m: &DfcPolicy, a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<PolicyCovariance> {
    let t_matrix = SurrogateModel::new(a, b, m.h())?.transform(m)?;
    let sigma = &t_matrix * t_matrix.transpose();
    Ok(PolicyCovariance { sigma, t_matrix })
}

/// How expectations over `η` are computed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Expectation {
    /// Frozen sample of `samples` windows drawn from `seed`; every policy is
    /// evaluated on the same sample.
    MonteCarlo { samples: usize, seed: u64 },
    /// One-dimensional quadrature over the Gaussian marginals; exact up to
    /// quadrature error, available for coordinate-separable costs.
    Quadrature,
}

impl Expectation {
    /// Quadrature when the cost supports it, Monte-Carlo otherwise.
    pub fn auto(cost: &dyn ConvexCost, samples: usize, seed: u64) -> Self {
        if cost.gaussian_form().is_some() {
            Expectation::Quadrature
        } else {
            Expectation::MonteCarlo { samples, seed }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SurrogateValue {
    pub value: f64,
    /// Monte-Carlo standard error; zero for quadrature.
    pub stderr: f64,
    pub grad: Option<DfcPolicy>,
}

#[derive(Debug, Clone)]
enum Engine {
    Sample(Arc<DMatrix<f64>>),
    Quadrature(GaussianForm),
}

/// `C(·|A,B)` for a fixed cost and expectation rule.
#[derive(Debug, Clone)]
pub struct SurrogateCost {
    model: SurrogateModel,
    cost: Arc<dyn ConvexCost>,
    engine: Engine,
}

impl SurrogateCost {
    pub fn new(model: SurrogateModel, cost: Arc<dyn ConvexCost>, expectation: Expectation) -> Result<Self> {
        ensure_dim("cost state dimension", cost.dx(), model.dx)?;
        ensure_dim("cost control dimension", cost.du(), model.du)?;
        let engine = match expectation {
            Expectation::MonteCarlo { samples, seed } => {
                if samples < 2 {
                    return Err(Error::InvalidArgument("need at least 2 Monte-Carlo samples".into()));
                }
                let rows = (2 * model.h + 1) * model.dx;
                let mut r = rng::stream(seed, &[rng::label::SURROGATE, rows as u64]);
                let mut data = vec![0.0; rows * samples];
                rng::fill_standard_normal(&mut r, &mut data);
                Engine::Sample(Arc::new(DMatrix::from_vec(rows, samples, data)))
            }
            Expectation::Quadrature => Engine::Quadrature(cost.gaussian_form().ok_or_else(|| {
                Error::InvalidArgument("quadrature needs a coordinate-separable cost".into())
            })?),
        };
        Ok(Self { model, cost, engine })
    }

    pub fn model(&self) -> &SurrogateModel {
        &self.model
    }

    pub fn cost(&self) -> &Arc<dyn ConvexCost> {
        &self.cost
    }

    pub fn is_exact(&self) -> bool {
        matches!(self.engine, Engine::Quadrature(_))
    }

    pub fn value(&self, m: &DfcPolicy) -> Result<SurrogateValue> {
        self.evaluate(m, false)
    }

    pub fn value_grad(&self, m: &DfcPolicy) -> Result<SurrogateValue> {
        self.evaluate(m, true)
    }

    pub fn evaluate(&self, m: &DfcPolicy, with_grad: bool) -> Result<SurrogateValue> {
        let t = self.model.transform(m)?;
        let (value, stderr, g) = transform_expectation(&self.engine, self.cost.as_ref(), &t, with_grad)?;
        let grad = match g {
            Some(g) => Some(self.model.pullback(&g)?),
            None => None,
        };
        Ok(SurrogateValue { value, stderr, grad })
    }
}

/// `E c(T η)` and, optionally, `∂/∂T`.
fn transform_expectation(
    engine: &Engine,
    cost: &dyn ConvexCost,
    t: &DMatrix<f64>,
    with_grad: bool,
) -> Result<(f64, f64, Option<DMatrix<f64>>)> {
    let dx = cost.dx();
    match engine {
        Engine::Sample(etas) => {
            let n = etas.ncols();
            let z = t * etas.as_ref();
            let mut values = Vec::with_capacity(n);
            let mut gz = if with_grad { DMatrix::zeros(z.nrows(), n) } else { DMatrix::zeros(0, 0) };
            let mut gbuf = vec![0.0; z.nrows()];
            for k in 0..n {
                let col = z.column(k);
                let (x, u) = col.as_slice().split_at(dx);
                let v = if with_grad {
                    let (gx, gu) = gbuf.split_at_mut(dx);
                    let v = cost.value_grad(x, u, gx, gu);
                    gz.column_mut(k).copy_from_slice(&gbuf);
                    v
                } else {
                    cost.value(x, u)
                };
                if !v.is_finite() {
                    return Err(Error::NonFinite(format!("cost at Monte-Carlo sample {k}")));
                }
                values.push(v);
            }
            let (mean, se) = crate::linalg::mean_stderr(&values);
            let g = with_grad.then(|| gz * etas.transpose() / n as f64);
            Ok((mean, se, g))
        }
        Engine::Quadrature(form) => {
            let pt = match &form.transform {
                Some(p) => p * t,
                None => t.clone(),
            };
            let nz = pt.nrows();
            let sigma: Vec<f64> = (0..nz).map(|i| pt.row(i).norm()).collect();
            let mean = vec![0.0; nz];
            let (mut dmean, mut curv) = (vec![0.0; nz], vec![0.0; nz]);
            let v = form.separable.gaussian_terms(&mean, &sigma, &mut dmean, &mut curv);
            if !v.is_finite() {
                return Err(Error::NonFinite("quadrature cost".into()));
            }
            let g = with_grad.then(|| {
                let mut g = pt;
                for i in 0..nz {
                    g.row_mut(i).scale_mut(curv[i]);
                }
                match &form.transform {
                    Some(p) => p.transpose() * g,
                    None => g,
                }
            });
            Ok((v, 0.0, g))
        }
    }
}

/// `(value, stderr, grad)` of `C(M|A,B)` by Monte-Carlo with `n_samples`.
pub fn surrogate_cost(
    m: &DfcPolicy,
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    cost: Arc<dyn ConvexCost>,
    n_samples: usize,
    seed: u64,
) -> Result<SurrogateValue> {
    let model = SurrogateModel::new(a, b, m.h())?;
    SurrogateCost::new(model, cost, Expectation::MonteCarlo { samples: n_samples, seed })?.value_grad(m)
}

/// `E c(z)` for `z ~ N(mean, cov)`, with the gradient with respect to `mean`.
pub fn gaussian_expected_cost(
    cost: &dyn ConvexCost,
    mean: &DVector<f64>,
    cov: &DMatrix<f64>,
    expectation: Expectation,
) -> Result<(f64, f64, DVector<f64>)> {
    let n = cost.dx() + cost.du();
    ensure_dim("mean", mean.len(), n)?;
    ensure_dim("covariance", cov.nrows(), n)?;
    let dx = cost.dx();
    match (expectation, cost.gaussian_form()) {
        (Expectation::Quadrature, Some(form)) => {
            let (m, c) = match &form.transform {
                Some(p) => (p * mean, p * cov * p.transpose()),
                None => (mean.clone(), cov.clone()),
            };
            let nz = m.len();
            let sigma: Vec<f64> = (0..nz).map(|i| c[(i, i)].max(0.0).sqrt()).collect();
            let (mut dmean, mut curv) = (vec![0.0; nz], vec![0.0; nz]);
            let v = form.separable.gaussian_terms(m.as_slice(), &sigma, &mut dmean, &mut curv);
            let g = DVector::from_vec(dmean);
            let g = match &form.transform {
                Some(p) => p.transpose() * g,
                None => g,
            };
            Ok((v, 0.0, g))
        }
        (Expectation::Quadrature, None) => {
            Err(Error::InvalidArgument("quadrature needs a coordinate-separable cost".into()))
        }
        (Expectation::MonteCarlo { samples, seed }, _) => {
            let root = psd_sqrt(cov);
            let mut r = rng::stream(seed, &[rng::label::SURROGATE, n as u64, 1]);
            let mut values = Vec::with_capacity(samples);
            let mut grad = DVector::zeros(n);
            let mut e = DVector::zeros(n);
            let mut gbuf = vec![0.0; n];
            for k in 0..samples {
                rng::fill_standard_normal(&mut r, e.as_mut_slice());
                let z = mean + &root * &e;
                let (x, u) = z.as_slice().split_at(dx);
                let (gx, gu) = gbuf.split_at_mut(dx);
                let v = cost.value_grad(x, u, gx, gu);
                if !v.is_finite() {
                    return Err(Error::NonFinite(format!("cost at Monte-Carlo sample {k}")));
                }
                values.push(v);
                for i in 0..n {
                    grad[i] += gbuf[i];
                }
            }
            let (mean_v, se) = crate::linalg::mean_stderr(&values);
            Ok((mean_v, se, grad / samples as f64))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lds::cost::{CostFamily, SeparableCost};

    fn scalar(v: f64) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, v)
    }

    #[test]
    fn scalar_psi_by_hand() {
        let model = SurrogateModel::new(&scalar(0.5), &scalar(1.0), 2).unwrap();
        let m = DfcPolicy::unflatten(2, 1, 1, &[0.3, 0.2]).unwrap();
        let psi: Vec<f64> = model.psi(&m).unwrap().iter().map(|p| p[(0, 0)]).collect();
        let want = [1.0, 0.8, 0.6, 0.175, 0.05];
        for (p, w) in psi.iter().zip(want) {
            assert!((p - w).abs() < 1e-15, "{psi:?}");
        }
    }

    #[test]
    fn scalar_covariance_by_hand() {
        let m = DfcPolicy::unflatten(1, 1, 1, &[0.7]).unwrap();
        let cov = policy_covariance(&m, &scalar(0.0), &scalar(1.0)).unwrap();
        let want = DMatrix::from_row_slice(2, 2, &[1.0 + 0.49, 0.7, 0.7, 0.49]);
        assert!((cov.sigma - want).norm() < 1e-15);
    }

    #[test]
    fn quadrature_and_monte_carlo_agree() {
        let a = DMatrix::from_row_slice(2, 2, &[0.5, 0.1, -0.2, 0.3]);
        let b = DMatrix::from_row_slice(2, 1, &[1.0, 0.5]);
        let cost: Arc<dyn ConvexCost> = Arc::new(
            SeparableCost::uniform(CostFamily::Huber { delta: 1.0 }, 2, 1)
                .unwrap()
                .with_targets(vec![0.5, 0.0, -0.3])
                .unwrap(),
        );
        let model = SurrogateModel::new(&a, &b, 2).unwrap();
        let m = DfcPolicy::unflatten(2, 2, 1, &[0.2, -0.4, 0.1, 0.3]).unwrap();
        let q = SurrogateCost::new(model.clone(), cost.clone(), Expectation::Quadrature).unwrap();
        let mc = SurrogateCost::new(model, cost, Expectation::MonteCarlo { samples: 100_000, seed: 3 }).unwrap();
        let (vq, vm) = (q.value_grad(&m).unwrap(), mc.value_grad(&m).unwrap());
        assert!((vq.value - vm.value).abs() < 4.0 * vm.stderr, "{} {} {}", vq.value, vm.value, vm.stderr);
        let (gq, gm) = (vq.grad.unwrap().flatten(), vm.grad.unwrap().flatten());
        assert!((gq - gm).amax() < 0.02);
    }
}
