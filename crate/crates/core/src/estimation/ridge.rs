use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::dfc::policy::PolicyClassSpec;
use crate::error::{ensure_dim, Error, Result};
use crate::linalg::{hcat, stack, vec_all_finite};

const REFRESH_EVERY: usize = 512;
const MAX_CONDITION: f64 = 1e12;

/// `(Â, B̂)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemEstimate {
    pub a_hat: DMatrix<f64>,
    pub b_hat: DMatrix<f64>,
    /// `‖Δᵀ‖_V`, filled in by callers that know the true system.
    pub delta_norm_bound: Option<f64>,
}

impl SystemEstimate {
    pub fn new(a_hat: DMatrix<f64>, b_hat: DMatrix<f64>) -> Self {
        Self { a_hat, b_hat, delta_norm_bound: None }
    }

    /// `(Â B̂)` as one `d_x × (d_x + d_u)` matrix.
    pub fn stacked(&self) -> DMatrix<f64> {
        hcat(&self.a_hat, &self.b_hat)
    }

    pub fn from_stacked(theta: &DMatrix<f64>) -> Self {
        let dx = theta.nrows();
        let du = theta.ncols() - dx;
        Self::new(theta.columns(0, dx).into_owned(), theta.columns(dx, du).into_owned())
    }
}

/// Sufficient statistics for
/// `min Σ ‖(A B) z_s − x_{s+1}‖² + λ ‖(A B) − (A₀ B₀)‖_F²`.
#[derive(Debug, Clone)]
pub struct RidgeState {
    v: DMatrix<f64>,
    s: DMatrix<f64>,
    lambda: f64,
    prior: DMatrix<f64>,
    t: usize,
    v_inv: DMatrix<f64>,
    since_refresh: usize,
}

impl RidgeState {
    pub fn new(lambda: f64, prior: &SystemEstimate) -> Result<Self> {
        if !(lambda > 0.0) || !lambda.is_finite() {
            return Err(Error::InvalidArgument(format!("ridge lambda must be positive, got {lambda}")));
        }
        let prior = prior.stacked();
        let n = prior.ncols();
        Ok(Self {
            v: DMatrix::identity(n, n) * lambda,
            s: DMatrix::zeros(prior.nrows(), n),
            lambda,
            prior,
            t: 0,
            v_inv: DMatrix::identity(n, n) / lambda,
            since_refresh: 0,
        })
    }

    /// Zero prior.
    pub fn with_zero_prior(dx: usize, du: usize, lambda: f64) -> Result<Self> {
        Self::new(lambda, &SystemEstimate::new(DMatrix::zeros(dx, dx), DMatrix::zeros(dx, du)))
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn count(&self) -> usize {
        self.t
    }

    /// `V = Σ z zᵀ + λ I`.
    pub fn gram(&self) -> &DMatrix<f64> {
        &self.v
    }

    /// `S = Σ x_next zᵀ`.
    pub fn cross(&self) -> &DMatrix<f64> {
        &self.s
    }

    pub fn prior(&self) -> &DMatrix<f64> {
        &self.prior
    }

    /// Absorb one transition `(x, u) → x_next`.
    pub fn update(&mut self, x: &DVector<f64>, u: &DVector<f64>, x_next: &DVector<f64>) -> Result<()> {
        self.update_stacked(&stack(x, u), x_next)
    }

    pub fn update_stacked(&mut self, z: &DVector<f64>, x_next: &DVector<f64>) -> Result<()> {
        ensure_dim("regressor", z.len(), self.v.nrows())?;
        ensure_dim("next state", x_next.len(), self.s.nrows())?;
        if !vec_all_finite(z) || !vec_all_finite(x_next) {
            return Err(Error::NonFinite(format!("ridge update at t={}", self.t + 1)));
        }
        self.v.ger(1.0, z, z, 1.0);
        self.s.ger(1.0, x_next, z, 1.0);
        self.t += 1;
        self.since_refresh += 1;
        if self.since_refresh >= REFRESH_EVERY {
            self.refresh()?;
        } else {
            // Sherman–Morrison.
            let vz = &self.v_inv * z;
            let denom = 1.0 + z.dot(&vz);
            self.v_inv.ger(-1.0 / denom, &vz, &vz, 1.0);
        }
        Ok(())
    }

    fn refresh(&mut self) -> Result<()> {
        self.v_inv = self
            .v
            .clone()
            .cholesky()
            .ok_or_else(|| Error::Singular("ridge Gram matrix".into()))?
            .inverse();
        self.since_refresh = 0;
        Ok(())
    }

    pub fn condition_number(&self) -> f64 {
        let eig = SymmetricEigen::new(self.v.clone()).eigenvalues;
        eig.max() / eig.min()
    }

    /// `(Â B̂) = (S + λ·prior) V⁻¹`.
    pub fn solve(&self) -> Result<SystemEstimate> {
        let trace_bound = self.v.trace() / self.lambda;
        if trace_bound > MAX_CONDITION {
            let cond = self.condition_number();
            if cond > MAX_CONDITION {
                return Err(Error::IllConditioned { cond });
            }
        }
        let rhs = &self.s + &self.prior * self.lambda;
        Ok(SystemEstimate::from_stacked(&(rhs * &self.v_inv)))
    }

    /// `(Â B̂)` by a fresh Cholesky solve, bypassing the incremental inverse.
    pub fn solve_exact(&self) -> Result<SystemEstimate> {
        let chol = self.v.clone().cholesky().ok_or_else(|| Error::Singular("ridge Gram matrix".into()))?;
        let rhs = &self.s + &self.prior * self.lambda;
        let theta_t = chol.solve(&rhs.transpose());
        Ok(SystemEstimate::from_stacked(&theta_t.transpose()))
    }

    /// `‖Δᵀ‖_V = sqrt(tr(Δ V Δᵀ))` for the error `Δ = (Â B̂) − truth`.
    pub fn confidence_norm(&self, estimate: &SystemEstimate, truth: &SystemEstimate) -> f64 {
        let delta = estimate.stacked() - truth.stacked();
        (&delta * &self.v * delta.transpose()).trace().max(0.0).sqrt()
    }
}

/// `scale · κ⁴ β² γ⁻⁵ G² d_x d_u (d_x + d_u)³`.
pub fn lambda_schedule(spec: &PolicyClassSpec, kappa: f64, beta: f64, gamma: f64, scale: f64) -> f64 {
    let (dx, du) = (spec.dx as f64, spec.du as f64);
    scale * kappa.powi(4) * beta.powi(2) * gamma.powi(-5) * spec.g.powi(2) * dx * du * (dx + du).powi(3)
}

/// `ŵ = x_next − Â x − B̂ u`.
pub fn estimate_disturbance(
    x_next: &DVector<f64>,
    est: &SystemEstimate,
    x: &DVector<f64>,
    u: &DVector<f64>,
) -> DVector<f64> {
    let mut w = x_next.clone();
    w.gemv(-1.0, &est.a_hat, x, 1.0);
    w.gemv(-1.0, &est.b_hat, u, 1.0);
    w
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fresh_state_returns_prior() {
        let prior = SystemEstimate::new(DMatrix::from_element(1, 1, 0.3), DMatrix::from_element(1, 2, -1.0));
        let r = RidgeState::new(2.0, &prior).unwrap();
        assert_eq!(r.solve().unwrap().stacked(), prior.stacked());
    }

    #[test]
    fn zero_regressor_changes_nothing() {
        let mut r = RidgeState::with_zero_prior(2, 1, 1.5).unwrap();
        let before = r.gram().clone();
        r.update(&DVector::zeros(2), &DVector::zeros(1), &DVector::from_vec(vec![1.0, 2.0])).unwrap();
        assert_eq!(r.gram(), &before);
        assert_eq!(r.cross(), &DMatrix::zeros(2, 3));
    }

    #[test]
    fn incremental_inverse_tracks_exact_solve() {
        let mut r = RidgeState::with_zero_prior(2, 1, 0.5).unwrap();
        let mut rng = crate::rng::stream(4, &[]);
        for _ in 0..1500 {
            let z = DVector::from_fn(3, |_, _| crate::rng::standard_normal(&mut rng));
            let xn = DVector::from_fn(2, |_, _| crate::rng::standard_normal(&mut rng));
            r.update_stacked(&z, &xn).unwrap();
        }
        let (a, b) = (r.solve().unwrap().stacked(), r.solve_exact().unwrap().stacked());
        assert!((a - b).amax() < 1e-10);
    }

    #[test]
    fn lambda_formula() {
        let spec = PolicyClassSpec::new(1, 1.0, 1, 1).unwrap();
        assert!((lambda_schedule(&spec, 1.0, 1.0, 1.0, 1.0) - 8.0).abs() < 1e-12);
        let ratio = lambda_schedule(&spec, 1.0, 1.0, 0.25, 1.0) / lambda_schedule(&spec, 1.0, 1.0, 0.5, 1.0);
        assert!((ratio - 32.0).abs() < 1e-9);
    }

    #[test]
    fn disturbance_error_is_delta_times_regressor() {
        let a = DMatrix::from_row_slice(2, 2, &[0.5, 0.1, 0.0, 0.3]);
        let b = DMatrix::from_row_slice(2, 1, &[1.0, -1.0]);
        let e = DMatrix::from_row_slice(2, 2, &[0.01, -0.02, 0.03, 0.0]);
        let (x, u, w) = (
            DVector::from_vec(vec![1.0, -2.0]),
            DVector::from_vec(vec![0.5]),
            DVector::from_vec(vec![0.1, 0.2]),
        );
        let x_next = &a * &x + &b * &u + &w;
        let est = SystemEstimate::new(&a + &e, b.clone());
        let w_hat = estimate_disturbance(&x_next, &est, &x, &u);
        assert!((w_hat - &w + &e * &x).amax() < 1e-15);
    }
}
