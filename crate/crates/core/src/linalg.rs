//! Small dense complex linear-algebra helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};

/// Eigen-decomposition of a Hermitian matrix with eigenvalues sorted in
/// descending order. Columns of the returned matrix are the eigenvectors.
pub fn hermitian_eigen(m: &DMatrix<Complex64>) -> (Vec<f64>, DMatrix<Complex64>) {
    let sym = hermitian_part(m);
    let eig = sym.symmetric_eigen();
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = DMatrix::from_fn(m.nrows(), order.len(), |r, c| eig.eigenvectors[(r, order[c])]);
    (values, vectors)
}

/// (M + M^H) / 2
pub fn hermitian_part(m: &DMatrix<Complex64>) -> DMatrix<Complex64> {
    (m + m.adjoint()) * Complex64::new(0.5, 0.0)
}

/// Largest absolute deviation from Hermitian symmetry.
pub fn hermitian_defect(m: &DMatrix<Complex64>) -> f64 {
    (m - m.adjoint()).iter().map(|z| z.norm()).fold(0.0, f64::max)
}

/// Frobenius norm of U^H U - I.
pub fn unitarity_defect(u: &DMatrix<Complex64>) -> f64 {
    let g = u.adjoint() * u;
    let id = DMatrix::<Complex64>::identity(g.nrows(), g.ncols());
    (g - id).norm()
}

pub fn trace_real(m: &DMatrix<Complex64>) -> f64 {
    (0..m.nrows().min(m.ncols())).map(|i| m[(i, i)].re).sum()
}

/// Inverse of a Hermitian matrix after adding `loading * trace / n` to the diagonal.
pub fn loaded_inverse(m: &DMatrix<Complex64>, loading: f64) -> Result<DMatrix<Complex64>> {
    let n = m.nrows();
    let delta = loading * trace_real(m) / n as f64;
    let mut loaded = hermitian_part(m);
    for i in 0..n {
        loaded[(i, i)] += Complex64::new(delta, 0.0);
    }
    let inv = match loaded.clone().cholesky() {
        Some(ch) => ch.inverse(),
        None => loaded
            .try_inverse()
            .ok_or_else(|| Error::Numerical("correlation matrix is singular after diagonal loading".into()))?,
    };
    if inv.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Err(Error::Numerical("correlation matrix inverse is not finite".into()));
    }
    Ok(inv)
}

/// Hermitian inner product a^H b.
pub fn dot_h(a: &DVector<Complex64>, b: &DVector<Complex64>) -> Complex64 {
    a.dotc(b)
}

/// Normalizes every row of `w` to unit Euclidean norm. Zero rows are left
/// untouched and reported through the return value.
pub fn normalize_rows(w: &mut DMatrix<Complex64>) -> bool {
    let mut all_nonzero = true;
    for mut row in w.row_iter_mut() {
        let norm = row.norm();
        if norm > 0.0 && norm.is_finite() {
            row /= Complex64::new(norm, 0.0);
        } else {
            all_nonzero = false;
        }
    }
    all_nonzero
}
