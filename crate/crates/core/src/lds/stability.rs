//! Strong-stability certificates `A = Q Λ Q⁻¹` with `‖Λ‖ ≤ 1−γ`, `‖Q‖, ‖Q⁻¹‖ ≤ κ`.

use nalgebra::{Complex, DMatrix};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{psd_sqrt, spectral_norm, symmetrize};

const RECONSTRUCTION_TOL: f64 = 1e-8;
const NORM_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityCertificate {
    pub q: DMatrix<f64>,
    pub lambda: DMatrix<f64>,
    pub kappa: f64,
    pub gamma: f64,
    /// Which construction produced the certificate.
    pub method: CertificateMethod,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CertificateMethod {
    Identity,
    Eigen,
    Lyapunov,
}

impl StabilityCertificate {
    /// `κ²(1−γ)^i`, an upper bound on `‖A^i‖`.
    pub fn power_bound(&self, i: usize) -> f64 {
        spectral_power_bound(self.kappa, self.gamma, i)
    }

    pub fn q_norm(&self) -> f64 {
        spectral_norm(&self.q)
    }

    pub fn q_inv_norm(&self) -> f64 {
        self.q
            .clone()
            .try_inverse()
            .map_or(f64::INFINITY, |qi| spectral_norm(&qi))
    }

    pub fn lambda_norm(&self) -> f64 {
        spectral_norm(&self.lambda)
    }

    /// Certify `a` with the same `Q` at decay rate `gamma`, for matrices
    /// close to the certified one: `‖A − A'‖ ≤ γ/(2κ²)` yields rate `γ/2`.
    pub fn transfer(&self, a: &DMatrix<f64>, gamma: f64) -> Result<StabilityCertificate> {
        if a.shape() != self.q.shape() {
            return Err(Error::Dimension(format!("expected {:?}, got {:?}", self.q.shape(), a.shape())));
        }
        let qi = self.q.clone().try_inverse().ok_or_else(|| Error::Singular("certificate Q".into()))?;
        let cert = StabilityCertificate {
            q: self.q.clone(),
            lambda: &qi * a * &self.q,
            kappa: self.kappa,
            gamma,
            method: self.method,
        };
        verify(a, &cert).map_err(Error::NoCertificate)?;
        Ok(cert)
    }

    /// `Q Λ Q⁻¹`.
    pub fn reconstruct(&self) -> DMatrix<f64> {
        let qi = self.q.clone().try_inverse().expect("certificate Q is invertible");
        &self.q * &self.lambda * qi
    }
}

pub fn spectral_power_bound(kappa: f64, gamma: f64, i: usize) -> f64 {
    kappa * kappa * (1.0 - gamma).powi(i as i32)
}

/// Search for a `(kappa, gamma)`-strong-stability certificate of `a`.
///
/// Tries the trivial decomposition `Q = I`, then an eigendecomposition in real
/// block form, then a Lyapunov-weighted decomposition. The error message names
/// the inequality each attempt violated.
pub fn check_strong_stability(a: &DMatrix<f64>, kappa: f64, gamma: f64) -> Result<StabilityCertificate> {
    if !a.is_square() {
        return Err(Error::Dimension(format!("A must be square, got {}x{}", a.nrows(), a.ncols())));
    }
    if !(kappa >= 1.0) || !(gamma > 0.0 && gamma < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "need kappa >= 1 and gamma in (0,1), got kappa={kappa}, gamma={gamma}"
        )));
    }
    if !a.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite("A".into()));
    }
    let n = a.nrows();
    let mut reasons = Vec::new();

    let candidates: [(CertificateMethod, Box<dyn Fn() -> std::result::Result<(DMatrix<f64>, DMatrix<f64>), String>>); 3] = [
        (CertificateMethod::Identity, Box::new(|| Ok((DMatrix::identity(n, n), a.clone())))),
        (CertificateMethod::Eigen, Box::new(|| eigen_decomposition(a))),
        (CertificateMethod::Lyapunov, Box::new(|| lyapunov_decomposition(a, 1.0 - gamma))),
    ];
    for (method, build) in candidates.iter() {
        match build() {
            Ok((q, lambda)) => {
                let cert = StabilityCertificate { q, lambda, kappa, gamma, method: *method };
                match verify(a, &cert) {
                    Ok(()) => return Ok(cert),
                    Err(why) => reasons.push(format!("{method:?}: {why}")),
                }
            }
            Err(why) => reasons.push(format!("{method:?}: {why}")),
        }
    }
    Err(Error::NoCertificate(reasons.join("; ")))
}

fn verify(a: &DMatrix<f64>, cert: &StabilityCertificate) -> std::result::Result<(), String> {
    let qi = cert.q.clone().try_inverse().ok_or("Q is singular")?;
    let rec = &cert.q * &cert.lambda * &qi;
    let err = (rec - a).norm();
    if err > RECONSTRUCTION_TOL * a.norm() + 1e-14 {
        return Err(format!("reconstruction error {err:.3e}"));
    }
    let lam = spectral_norm(&cert.lambda);
    if lam > 1.0 - cert.gamma + NORM_SLACK {
        return Err(format!("||Lambda|| = {lam:.6} > 1 - gamma = {:.6}", 1.0 - cert.gamma));
    }
    let qn = spectral_norm(&cert.q);
    if qn > cert.kappa * (1.0 + NORM_SLACK) {
        return Err(format!("||Q|| = {qn:.6} > kappa = {}", cert.kappa));
    }
    let qin = spectral_norm(&qi);
    if qin > cert.kappa * (1.0 + NORM_SLACK) {
        return Err(format!("||Q^-1|| = {qin:.6} > kappa = {}", cert.kappa));
    }
    Ok(())
}

/// Scale `q` by a scalar so that `‖Q‖ = ‖Q⁻¹‖`.
fn balance(q: DMatrix<f64>) -> std::result::Result<DMatrix<f64>, String> {
    let qi = q.clone().try_inverse().ok_or("eigenvector matrix is singular")?;
    let s = (spectral_norm(&qi) / spectral_norm(&q)).sqrt();
    Ok(q * s)
}

/// Real block-diagonal eigendecomposition; fails for defective matrices.
fn eigen_decomposition(a: &DMatrix<f64>) -> std::result::Result<(DMatrix<f64>, DMatrix<f64>), String> {
    let n = a.nrows();
    if n == 0 {
        return Ok((DMatrix::zeros(0, 0), DMatrix::zeros(0, 0)));
    }
    let scale = spectral_norm(a).max(1.0);
    let cluster_tol = 1e-6 * scale;
    let null_tol = 1e-7 * scale;
    let eig: Vec<Complex<f64>> = a.complex_eigenvalues().iter().copied().collect();

    // Group eigenvalues with nonnegative imaginary part into clusters.
    let mut clusters: Vec<(Complex<f64>, usize)> = Vec::new();
    for &ev in eig.iter().filter(|e| e.im >= -cluster_tol) {
        let ev = if ev.im.abs() < cluster_tol { Complex::new(ev.re, 0.0) } else { ev };
        match clusters.iter_mut().find(|(c, _)| (c - ev).norm() < cluster_tol) {
            Some(entry) => entry.1 += 1,
            None => clusters.push((ev, 1)),
        }
    }

    let mut q = DMatrix::<f64>::zeros(n, n);
    let mut lambda = DMatrix::<f64>::zeros(n, n);
    let mut col = 0;
    for (ev, mult) in clusters {
        if ev.im == 0.0 {
            let shifted = a - DMatrix::identity(n, n) * ev.re;
            let svd = shifted.svd(false, true);
            let vt = svd.v_t.ok_or("SVD failed")?;
            let null: Vec<usize> = (0..n).filter(|&k| svd.singular_values[k] <= null_tol).collect();
            if null.len() != mult {
                return Err(format!(
                    "defective eigenvalue {:.6} (multiplicity {mult}, {} eigenvectors)",
                    ev.re,
                    null.len()
                ));
            }
            for k in null {
                if col >= n {
                    return Err("too many eigenvectors".into());
                }
                q.set_column(col, &vt.row(k).transpose());
                lambda[(col, col)] = ev.re;
                col += 1;
            }
        } else {
            let ac = a.map(|v| Complex::new(v, 0.0));
            let shifted = ac - DMatrix::<Complex<f64>>::identity(n, n) * ev;
            let svd = shifted.svd(false, true);
            let vt = svd.v_t.ok_or("SVD failed")?;
            let null: Vec<usize> = (0..n).filter(|&k| svd.singular_values[k] <= null_tol).collect();
            if null.len() != mult {
                return Err(format!(
                    "defective eigenvalue {:.6}{:+.6}i (multiplicity {mult}, {} eigenvectors)",
                    ev.re,
                    ev.im,
                    null.len()
                ));
            }
            for k in null {
                if col + 1 >= n {
                    return Err("too many eigenvectors".into());
                }
                // Right singular vectors are rows of V^H; conjugate to get the vector.
                let v: Vec<Complex<f64>> = vt.row(k).iter().map(|c| c.conj()).collect();
                let re = nalgebra::DVector::from_iterator(n, v.iter().map(|c| c.re));
                let im = nalgebra::DVector::from_iterator(n, v.iter().map(|c| c.im));
                let norm = (re.norm_squared() + im.norm_squared()).sqrt();
                q.set_column(col, &(re / norm));
                q.set_column(col + 1, &(im / norm));
                lambda[(col, col)] = ev.re;
                lambda[(col, col + 1)] = ev.im;
                lambda[(col + 1, col)] = -ev.im;
                lambda[(col + 1, col + 1)] = ev.re;
                col += 2;
            }
        }
    }
    if col != n {
        return Err(format!("found {col} eigenvectors for a {n}x{n} matrix"));
    }
    for j in 0..n {
        let c = q.column(j).norm();
        if c > 0.0 && ev_is_real(&lambda, j) {
            q.column_mut(j).scale_mut(1.0 / c);
        }
    }
    Ok((balance(q)?, lambda))
}

fn ev_is_real(lambda: &DMatrix<f64>, j: usize) -> bool {
    let n = lambda.nrows();
    (j + 1 >= n || lambda[(j, j + 1)] == 0.0) && (j == 0 || lambda[(j, j - 1)] == 0.0)
}

/// `Q = P^{-1/2}` for `P = Σ_k (A/ρ)^{k⊤}(A/ρ)^k`, which makes `‖Q⁻¹AQ‖ < ρ`.
fn lyapunov_decomposition(a: &DMatrix<f64>, rho: f64) -> std::result::Result<(DMatrix<f64>, DMatrix<f64>), String> {
    let n = a.nrows();
    if n == 0 {
        return Ok((DMatrix::zeros(0, 0), DMatrix::zeros(0, 0)));
    }
    let radius = a.complex_eigenvalues().iter().map(|c| c.norm()).fold(0.0, f64::max);
    if radius >= rho {
        return Err(format!("spectral radius {radius:.6} >= 1 - gamma = {rho:.6}"));
    }
    let scaled = a / rho;
    // Doubling iteration: P_{2k} = P_k + (S^k)^T P_k S^k.
    let mut p = DMatrix::identity(n, n);
    let mut s = scaled;
    for _ in 0..64 {
        let term = s.transpose() * &p * &s;
        let done = term.norm() <= 1e-15 * p.norm();
        p += term;
        s = &s * &s;
        if done {
            break;
        }
        if !p.iter().all(|v| v.is_finite()) {
            return Err("Lyapunov series diverged".into());
        }
    }
    let p = symmetrize(&p);
    let p_half = psd_sqrt(&p);
    let q = p_half.clone().try_inverse().ok_or("Lyapunov weight is singular")?;
    let q = balance(q)?;
    let qi = q.clone().try_inverse().ok_or("Lyapunov weight is singular")?;
    let lambda = &qi * a * &q;
    Ok((q, lambda))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_matrix_is_certified_trivially() {
        let cert = check_strong_stability(&DMatrix::zeros(3, 3), 1.0, 1.0 - 1e-12).unwrap();
        assert_eq!(cert.q, DMatrix::identity(3, 3));
        assert_eq!(cert.lambda, DMatrix::zeros(3, 3));
    }

    #[test]
    fn scaled_identity() {
        let a = DMatrix::identity(2, 2) * 0.5;
        let cert = check_strong_stability(&a, 1.0, 0.5).unwrap();
        assert_eq!(cert.q, DMatrix::identity(2, 2));
        assert_eq!(cert.lambda, a);
    }

    #[test]
    fn defective_jordan_block_fails_at_kappa_two() {
        let a = DMatrix::from_row_slice(2, 2, &[0.9, 0.5, 0.0, 0.9]);
        let err = check_strong_stability(&a, 2.0, 0.05).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("try larger kappa"), "{msg}");
        assert!(msg.contains("defective"), "{msg}");
    }

    #[test]
    fn defective_jordan_block_certified_with_large_kappa() {
        let a = DMatrix::from_row_slice(2, 2, &[0.9, 0.5, 0.0, 0.9]);
        let cert = check_strong_stability(&a, 4.0, 0.05).unwrap();
        assert_eq!(cert.method, CertificateMethod::Lyapunov);
        assert!(cert.lambda_norm() <= 0.95 + 1e-9);
    }

    #[test]
    fn rotation_uses_real_block_form() {
        let (c, s) = (0.6 * 0.8f64, 0.6 * 0.6f64);
        // Non-normal matrix similar to a scaled rotation.
        let rot = DMatrix::from_row_slice(2, 2, &[c, -s, s, c]);
        let t = DMatrix::from_row_slice(2, 2, &[1.0, 0.3, 0.0, 1.0]);
        let a = &t * rot * t.clone().try_inverse().unwrap();
        let cert = check_strong_stability(&a, 2.0, 0.3).unwrap();
        assert!((cert.reconstruct() - &a).norm() < 1e-10);
        assert!(cert.lambda_norm() <= 0.7 + 1e-9);
    }

    #[test]
    fn unstable_matrix_is_rejected() {
        let a = DMatrix::identity(2, 2) * 1.2;
        assert!(check_strong_stability(&a, 10.0, 0.1).is_err());
    }

    #[test]
    fn power_bound_formula() {
        assert_eq!(spectral_power_bound(1.0, 0.5, 0), 1.0);
        assert!((spectral_power_bound(2.0, 0.1, 1) - 3.6).abs() < 1e-12);
    }
}
