//! Small dense linear-algebra helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Largest singular value.
pub fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.singular_values().max()
}

/// Extreme eigenvalues of the symmetric part of `m`.
pub fn sym_eigen_range(m: &DMatrix<f64>) -> (f64, f64) {
    let s = symmetrize(m);
    let eig = SymmetricEigen::new(s);
    (eig.eigenvalues.min(), eig.eigenvalues.max())
}

pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    sym_eigen_range(m).0
}

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// `A^0, A^1, ..., A^k`.
pub fn powers(a: &DMatrix<f64>, k: usize) -> Vec<DMatrix<f64>> {
    let mut out = Vec::with_capacity(k + 1);
    out.push(DMatrix::identity(a.nrows(), a.ncols()));
    for i in 1..=k {
        let next = a * &out[i - 1];
        out.push(next);
    }
    out
}

/// Principal square root of a symmetric PSD matrix (negative eigenvalues clipped).
pub fn psd_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(symmetrize(m));
    let d = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&d) * eig.eigenvectors.transpose()
}

/// Build a matrix from row vectors.
pub fn from_rows(rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let nrows = rows.len();
    let ncols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::Dimension("ragged matrix rows".into()));
    }
    Ok(DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
}

pub fn to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}

/// Row-major flattening.
pub fn to_row_major(m: &DMatrix<f64>) -> Vec<f64> {
    let mut v = Vec::with_capacity(m.len());
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            v.push(m[(i, j)]);
        }
    }
    v
}

pub fn from_row_major(nrows: usize, ncols: usize, data: &[f64]) -> Result<DMatrix<f64>> {
    if data.len() != nrows * ncols {
        return Err(Error::Dimension(format!(
            "row-major data of length {} for a {nrows}x{ncols} matrix",
            data.len()
        )));
    }
    Ok(DMatrix::from_row_slice(nrows, ncols, data))
}

pub fn all_finite(m: &DMatrix<f64>) -> bool {
    m.iter().all(|v| v.is_finite())
}

pub fn vec_all_finite(v: &DVector<f64>) -> bool {
    v.iter().all(|x| x.is_finite())
}

/// Stack `x` on top of `u`.
pub fn stack(x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
    let mut z = DVector::zeros(x.len() + u.len());
    z.rows_mut(0, x.len()).copy_from(x);
    z.rows_mut(x.len(), u.len()).copy_from(u);
    z
}

/// Horizontal concatenation `(A B)`.
pub fn hcat(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(a.nrows(), a.ncols() + b.ncols());
    m.columns_mut(0, a.ncols()).copy_from(a);
    m.columns_mut(a.ncols(), b.ncols()).copy_from(b);
    m
}

/// Sample mean and standard error of the mean.
pub fn mean_stderr(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (0.0, 0.0);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn spectral_norm_of_diagonal() {
        let m = DMatrix::from_diagonal(&DVector::from_vec(vec![0.5, -3.0, 2.0]));
        assert_relative_eq!(spectral_norm(&m), 3.0, epsilon = 1e-12);
    }

    #[test]
    fn psd_sqrt_squares_back() {
        let m = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let r = psd_sqrt(&m);
        assert!((&r * &r - &m).norm() < 1e-12);
    }

    #[test]
    fn row_major_round_trip() {
        let m = DMatrix::from_row_slice(2, 3, &[1., 2., 3., 4., 5., 6.]);
        assert_eq!(to_row_major(&m), vec![1., 2., 3., 4., 5., 6.]);
        assert_eq!(from_row_major(2, 3, &to_row_major(&m)).unwrap(), m);
        assert!(from_row_major(2, 2, &[1.0]).is_err());
    }

    #[test]
    fn mean_stderr_basic() {
        let (m, s) = mean_stderr(&[1.0, 2.0, 3.0, 4.0]);
        assert_relative_eq!(m, 2.5);
        assert_relative_eq!(s, (1.6666666666666667f64 / 4.0).sqrt(), epsilon = 1e-12);
    }
}
