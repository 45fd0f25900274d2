//! Dense symmetric linear algebra helpers shared by the operator and
//! dynamics modules: generalized eigensolves against an SPD mass matrix,
//! mass-orthonormalization and subspace angles.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum LinalgError {
    #[error("matrix is not positive definite (Cholesky failed)")]
    NotPositiveDefinite,
    #[error("eigen residual {residual:.3e} exceeds tolerance {tol:.3e}")]
    EigenResidual { residual: f64, tol: f64 },
}

/// Eigenpairs of B w = lambda M w with M symmetric positive definite.
///
/// Eigenvalues ascend; eigenvector columns are M-orthonormal. Solved by
/// reducing to a standard symmetric problem through the Cholesky factor of M.
#[derive(Debug, Clone)]
pub struct GeneralizedEigen {
    pub eigenvalues: DVector<f64>,
    /// Columns are the eigenvectors in the original coordinates.
    pub eigenvectors: DMatrix<f64>,
    /// Max of ||B w - lambda M w|| over eigenpairs, relative to ||B||.
    pub max_residual: f64,
}

pub fn sym_generalized_eigen(
    b: &DMatrix<f64>,
    m: &DMatrix<f64>,
) -> Result<GeneralizedEigen, LinalgError> {
    let chol = m
        .clone()
        .cholesky()
        .ok_or(LinalgError::NotPositiveDefinite)?;
    let l = chol.l();
    // A = L^{-1} B L^{-T}, symmetrized against rounding.
    let li_b = l
        .solve_lower_triangular(b)
        .ok_or(LinalgError::NotPositiveDefinite)?;
    let a = l
        .solve_lower_triangular(&li_b.transpose())
        .ok_or(LinalgError::NotPositiveDefinite)?;
    let a = (&a + a.transpose()) * 0.5;

    let eig = a.symmetric_eigen();
    let n = b.nrows();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));

    let mut eigenvalues = DVector::zeros(n);
    let mut y = DMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        eigenvalues[dst] = eig.eigenvalues[src];
        y.set_column(dst, &eig.eigenvectors.column(src));
    }
    // Back-substitute: w = L^{-T} y.
    let w = l
        .transpose()
        .solve_upper_triangular(&y)
        .ok_or(LinalgError::NotPositiveDefinite)?;

    let b_norm = b.norm();
    let bw = b * &w;
    let mw = m * &w;
    let mut max_residual = 0.0_f64;
    for j in 0..n {
        let r = (bw.column(j) - mw.column(j) * eigenvalues[j]).norm();
        max_residual = max_residual.max(r / b_norm.max(1e-300));
    }

    Ok(GeneralizedEigen {
        eigenvalues,
        eigenvectors: w,
        max_residual,
    })
}

/// Gram-Schmidt in the M inner product; columns of the result span the same
/// space as the input columns and satisfy w_i^T M w_j = delta_ij.
pub fn m_orthonormalize(vectors: &[DVector<f64>], m: &DMatrix<f64>) -> Vec<DVector<f64>> {
    let mut out: Vec<DVector<f64>> = Vec::with_capacity(vectors.len());
    for v in vectors {
        let mut w = v.clone();
        for _ in 0..2 {
            for u in &out {
                let proj = u.dot(&(m * &w));
                w -= u * proj;
            }
        }
        let norm = w.dot(&(m * &w)).sqrt();
        out.push(w / norm);
    }
    out
}

/// Principal angles (radians, descending cosine order) between the column
/// spans of `a` and `b` in the M inner product.
pub fn principal_angles(a: &DMatrix<f64>, b: &DMatrix<f64>, m: &DMatrix<f64>) -> Vec<f64> {
    let qa = orthonormal_columns(a, m);
    let qb = orthonormal_columns(b, m);
    let cross = qa.transpose() * m * qb;
    let svd = cross.svd(false, false);
    svd.singular_values
        .iter()
        .map(|&s| s.clamp(-1.0, 1.0).acos())
        .collect()
}

fn orthonormal_columns(a: &DMatrix<f64>, m: &DMatrix<f64>) -> DMatrix<f64> {
    let cols: Vec<DVector<f64>> = (0..a.ncols()).map(|j| a.column(j).into_owned()).collect();
    let ortho = m_orthonormalize(&cols, m);
    DMatrix::from_columns(&ortho)
}

/// Condition number of a symmetric positive definite matrix.
pub fn spd_condition_number(m: &DMatrix<f64>) -> f64 {
    let eig = m.clone().symmetric_eigen();
    let max = eig.eigenvalues.max();
    let min = eig.eigenvalues.min();
    if min <= 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn sym_min_eigenvalue(a: &DMatrix<f64>) -> f64 {
    a.clone().symmetric_eigen().eigenvalues.min()
}
