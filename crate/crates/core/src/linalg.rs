//! Small dense linear-algebra helpers shared across modules.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;

/// Largest singular value.
pub fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.singular_values().max()
}

/// Singular values sorted ascending.
pub fn singular_values_ascending(m: &DMatrix<f64>) -> Vec<f64> {
    let mut s: Vec<f64> = m.singular_values().iter().copied().collect();
    s.sort_by(f64::total_cmp);
    s
}

/// Eigen-decomposition of the symmetric part of `m`, eigenvalues ascending.
/// Columns of the returned matrix are the matching eigenvectors.
pub fn sym_eigen_ascending(m: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let sym = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let n = eig.eigenvalues.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let values = DVector::from_iterator(n, order.iter().map(|&i| eig.eigenvalues[i]));
    let mut vectors = DMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        vectors.set_column(dst, &eig.eigenvectors.column(src));
    }
    (values, vectors)
}

pub fn sym_eigenvalues_ascending(m: &DMatrix<f64>) -> DVector<f64> {
    sym_eigen_ascending(m).0
}

/// Number of singular values above `rel_tol * sigma_max`.
pub fn numerical_rank(singular_values: &[f64], rel_tol: f64) -> usize {
    let max = singular_values.iter().copied().fold(0.0, f64::max);
    if max == 0.0 {
        return 0;
    }
    singular_values.iter().filter(|&&s| s > rel_tol * max).count()
}

pub fn rank(m: &DMatrix<f64>, rel_tol: f64) -> usize {
    if m.is_empty() {
        return 0;
    }
    let s: Vec<f64> = m.singular_values().iter().copied().collect();
    numerical_rank(&s, rel_tol)
}

pub fn complex_rank(m: &DMatrix<Complex64>, rel_tol: f64) -> usize {
    if m.is_empty() {
        return 0;
    }
    let s: Vec<f64> = m.clone().singular_values().iter().copied().collect();
    numerical_rank(&s, rel_tol)
}

/// Frobenius inner product.
pub fn frobenius_dot(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

pub fn is_finite(m: &DMatrix<f64>) -> bool {
    m.iter().all(|v| v.is_finite())
}
