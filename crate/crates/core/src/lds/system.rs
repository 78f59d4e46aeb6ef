use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ensure_dim, Error, Result};
use crate::lds::stability::{check_strong_stability, StabilityCertificate};
use crate::linalg::{from_rows, spectral_norm, to_rows};
use crate::rng;

/// `x_{t+1} = A x_t + B u_t + w_t` together with its stability metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearSystem {
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    kappa: f64,
    gamma: f64,
    beta: f64,
    /// `None` marks a system that needs a stabilizing feedback wrapper.
    certificate: Option<StabilityCertificate>,
}

/// Serialized form: matrices as arrays of rows.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemDoc {
    #[serde(rename = "A")]
    pub a: Vec<Vec<f64>>,
    #[serde(rename = "B")]
    pub b: Vec<Vec<f64>>,
    pub kappa: f64,
    pub gamma: f64,
    pub beta: f64,
    #[serde(default)]
    pub unstable: bool,
}

impl LinearSystem {
    /// A certified `(kappa, gamma)`-strongly stable system with `‖B‖ ≤ beta`.
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>, kappa: f64, gamma: f64, beta: f64) -> Result<Self> {
        Self::check_shapes(&a, &b, beta)?;
        let certificate = check_strong_stability(&a, kappa, gamma)?;
        Ok(Self { a, b, kappa, gamma, beta, certificate: Some(certificate) })
    }

    /// A system whose `A` is not certified; controllers must be wrapped with a
    /// stabilizing feedback gain before running on it.
    pub fn unstable(a: DMatrix<f64>, b: DMatrix<f64>, kappa: f64, gamma: f64, beta: f64) -> Result<Self> {
        Self::check_shapes(&a, &b, beta)?;
        Ok(Self { a, b, kappa, gamma, beta, certificate: None })
    }

    fn check_shapes(a: &DMatrix<f64>, b: &DMatrix<f64>, beta: f64) -> Result<()> {
        if !a.is_square() {
            return Err(Error::Dimension(format!("A is {}x{}", a.nrows(), a.ncols())));
        }
        ensure_dim("rows of B", b.nrows(), a.nrows())?;
        if !(a.iter().chain(b.iter()).all(|v| v.is_finite())) {
            return Err(Error::NonFinite("system matrices".into()));
        }
        if !(beta >= 1.0) {
            return Err(Error::InvalidArgument(format!("beta must be >= 1, got {beta}")));
        }
        let bn = spectral_norm(b);
        if bn > beta * (1.0 + 1e-12) {
            return Err(Error::InvalidArgument(format!("||B|| = {bn:.6} exceeds beta = {beta}")));
        }
        Ok(())
    }

    /// A random stable system: `A = Q diag(λ) Qᵀ` with orthogonal `Q` and
    /// `λ_i` uniform in `[-rho, rho]`, so `kappa = 1` and `gamma = 1 - rho`;
    /// `B` Gaussian, rescaled so that `‖B‖ ≤ b_norm`.
    pub fn random(dx: usize, du: usize, rho: f64, b_norm: f64, seed: u64) -> Result<Self> {
        if !(rho > 0.0 && rho < 1.0) {
            return Err(Error::InvalidArgument(format!("rho must lie in (0,1), got {rho}")));
        }
        let mut r = rng::stream(seed, &[rng::label::BOOTSTRAP, 1]);
        let g = DMatrix::from_fn(dx, dx, |_, _| rng::standard_normal(&mut r));
        let q = g.qr().q();
        let eig = DVector::from_fn(dx, |_, _| r.random_range(-rho..=rho));
        let a = &q * DMatrix::from_diagonal(&eig) * q.transpose();
        let b = DMatrix::from_fn(dx, du, |_, _| rng::standard_normal(&mut r));
        let b = &b * (b_norm / spectral_norm(&b).max(1e-12));
        Self::new(a, b, 1.0, 1.0 - rho, b_norm.max(1.0))
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }

    pub fn dx(&self) -> usize {
        self.a.nrows()
    }

    pub fn du(&self) -> usize {
        self.b.ncols()
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn certificate(&self) -> Option<&StabilityCertificate> {
        self.certificate.as_ref()
    }

    pub fn requires_wrapper(&self) -> bool {
        self.certificate.is_none()
    }

    /// `A x + B u + w`.
    pub fn step(&self, x: &DVector<f64>, u: &DVector<f64>, w: &DVector<f64>) -> Result<DVector<f64>> {
        ensure_dim("state", x.len(), self.dx())?;
        ensure_dim("control", u.len(), self.du())?;
        ensure_dim("disturbance", w.len(), self.dx())?;
        Ok(&self.a * x + &self.b * u + w)
    }

    pub fn to_doc(&self) -> SystemDoc {
        SystemDoc {
            a: to_rows(&self.a),
            b: to_rows(&self.b),
            kappa: self.kappa,
            gamma: self.gamma,
            beta: self.beta,
            unstable: self.requires_wrapper(),
        }
    }

    pub fn from_doc(doc: &SystemDoc) -> Result<Self> {
        let a = from_rows(&doc.a)?;
        let b = from_rows(&doc.b)?;
        if doc.unstable {
            Self::unstable(a, b, doc.kappa, doc.gamma, doc.beta)
        } else {
            Self::new(a, b, doc.kappa, doc.gamma, doc.beta)
        }
    }
}

/// `simulate_step` as a free function.
pub fn simulate_step(sys: &LinearSystem, x: &DVector<f64>, u: &DVector<f64>, w: &DVector<f64>) -> Result<DVector<f64>> {
    sys.step(x, u, w)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_dynamics_return_disturbance() {
        let sys = LinearSystem::new(DMatrix::zeros(2, 2), DMatrix::zeros(2, 1), 1.0, 0.5, 1.0).unwrap();
        let w = DVector::from_vec(vec![0.3, -0.7]);
        let x = DVector::from_vec(vec![5.0, 1.0]);
        let u = DVector::from_vec(vec![2.0]);
        assert_eq!(sys.step(&x, &u, &w).unwrap(), w);
    }

    #[test]
    fn scalar_step_by_hand() {
        let sys = LinearSystem::new(
            DMatrix::from_element(1, 1, 0.5),
            DMatrix::from_element(1, 1, 2.0),
            1.0,
            0.5,
            2.0,
        )
        .unwrap();
        let next = sys
            .step(&DVector::from_element(1, 1.0), &DVector::from_element(1, 0.25), &DVector::from_element(1, 0.1))
            .unwrap();
        assert!((next[0] - 1.1).abs() < 1e-15);
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let sys = LinearSystem::random(2, 1, 0.5, 1.0, 3).unwrap();
        let bad = sys.step(&DVector::zeros(3), &DVector::zeros(1), &DVector::zeros(2));
        assert!(matches!(bad, Err(Error::Dimension(_))));
    }

    #[test]
    fn doc_round_trip() {
        let sys = LinearSystem::random(3, 2, 0.7, 1.0, 11).unwrap();
        let text = serde_json::to_string(&sys.to_doc()).unwrap();
        let doc: SystemDoc = serde_json::from_str(&text).unwrap();
        let back = LinearSystem::from_doc(&doc).unwrap();
        assert_eq!(back.a(), sys.a());
        assert_eq!(back.b(), sys.b());
    }

    #[test]
    fn b_norm_above_beta_is_rejected() {
        let b = DMatrix::from_element(1, 1, 3.0);
        assert!(LinearSystem::new(DMatrix::zeros(1, 1), b, 1.0, 0.5, 2.0).is_err());
    }
}
