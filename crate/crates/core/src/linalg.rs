//! Small dense linear-algebra helpers shared by the solvers.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

/// Relative singularity threshold for symmetric solves.
pub const SINGULAR_REL: f64 = 1e-12;

/// Relative tolerance used by PSD tests: `λ_min ≥ −PSD_REL · (1 + |tr M|)`.
pub const PSD_REL: f64 = 1e-10;

/// Ascending eigenvalues of a symmetric matrix.
pub fn sym_eigenvalues(m: &DMatrix<f64>) -> Vec<f64> {
    if m.nrows() == 0 {
        return Vec::new();
    }
    let mut ev: Vec<f64> = SymmetricEigen::new(m.clone()).eigenvalues.iter().copied().collect();
    ev.sort_by(f64::total_cmp);
    ev
}

pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    sym_eigenvalues(m).first().copied().unwrap_or(0.0)
}

pub fn max_eigenvalue(m: &DMatrix<f64>) -> f64 {
    sym_eigenvalues(m).last().copied().unwrap_or(0.0)
}

/// Scale used by the PSD tolerance.
pub fn psd_scale(m: &DMatrix<f64>) -> f64 {
    1.0 + m.trace().abs()
}

pub fn is_psd(m: &DMatrix<f64>) -> bool {
    min_eigenvalue(m) >= -PSD_REL * psd_scale(m)
}

/// Strict positive definiteness with the same scale-aware margin.
pub fn is_pd(m: &DMatrix<f64>) -> bool {
    min_eigenvalue(m) > PSD_REL * psd_scale(m)
}

/// Solves `m x = rhs` for symmetric `m` through its eigendecomposition.
///
/// Returns `None` when the smallest eigenvalue magnitude falls below
/// `SINGULAR_REL · max|m_ii|`.
pub fn sym_solve(m: &DMatrix<f64>, rhs: &DVector<f64>) -> Option<DVector<f64>> {
    let p = m.nrows();
    if p == 0 {
        return Some(DVector::zeros(0));
    }
    let max_diag = (0..p).map(|i| m[(i, i)].abs()).fold(0.0, f64::max);
    if max_diag == 0.0 {
        return None;
    }
    let eig = SymmetricEigen::new(m.clone());
    let thresh = SINGULAR_REL * max_diag;
    if eig.eigenvalues.iter().any(|l| l.abs() <= thresh) {
        return None;
    }
    let coords = eig.eigenvectors.transpose() * rhs;
    let scaled = DVector::from_iterator(
        p,
        coords.iter().zip(eig.eigenvalues.iter()).map(|(c, l)| c / l),
    );
    Some(&eig.eigenvectors * scaled)
}

/// Minimum-norm least-squares solution of `a x ≈ b`.
pub fn lstsq(a: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    let svd = a.clone().svd(true, true);
    let smax = svd.singular_values.iter().copied().fold(0.0, f64::max);
    let eps = smax * 1e-13 * (a.nrows().max(a.ncols()) as f64);
    svd.solve(b, eps)
        .unwrap_or_else(|_| DVector::zeros(a.ncols()))
}

/// Deterministic unit vector orthogonal to `b`, built from the Householder
/// reflection that maps `b` onto the axis of its last coordinate.
///
/// `index` selects which column of the complement to return (0-based); the
/// default choice is `0`.
pub fn orthogonal_complement_vector(b: &DVector<f64>, index: usize) -> DVector<f64> {
    let len = b.len();
    assert!(len >= 2, "complement needs at least two coordinates");
    let k = len - 1;
    let norm = b.norm();
    let mut out = DVector::zeros(len);
    if norm == 0.0 {
        out[index.min(k - 1)] = 1.0;
        return out;
    }
    // v = b + sign(b_k) ‖b‖ e_k ; H = I − 2 v vᵀ / vᵀv
    let sign = if b[k] >= 0.0 { 1.0 } else { -1.0 };
    let mut v = b.clone();
    v[k] += sign * norm;
    let vtv = v.norm_squared();
    // Columns of H other than k span b⊥; pick the index-th such column.
    let col = if index < k { index } else { index + 1 };
    let col = col.min(len - 1);
    for i in 0..len {
        let e = if i == col { 1.0 } else { 0.0 };
        out[i] = e - 2.0 * v[i] * v[col] / vtv;
    }
    out
}
